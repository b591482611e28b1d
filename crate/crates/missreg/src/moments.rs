//! Unbiased first and second moment estimation under missingness, eigenvalue
//! clipping and the restricted-eigenvalue diagnostic.
//!
//! `gamma_hat` estimates `E[XY] = Sigma beta*` and `sigma_hat` estimates the
//! second moment matrix `Sigma` from pairwise-complete sums. `sigma_hat` is
//! symmetric but may be indefinite; the clipped variant replaces it by
//! `lambda_minus * I` whenever its spectrum leaves `[lambda_minus/2,
//! 2*lambda_plus]`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::patterns::{MissingDataset, ModalityPartition, SampleCounts};

/// Largest dimension accepted by [`restricted_eigenvalue`].
pub const RE_MAX_P: usize = 12;
/// Largest sparsity accepted by [`restricted_eigenvalue`].
pub const RE_MAX_S: usize = 3;

const EIG_TOL: f64 = 1e-10;

/// Spectrum bounds `0 < lambda_minus <= lambda_plus` used for clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipConfig {
    pub lambda_minus: f64,
    pub lambda_plus: f64,
}

impl ClipConfig {
    pub fn new(lambda_minus: f64, lambda_plus: f64) -> Result<Self> {
        if !(lambda_minus > 0.0 && lambda_minus.is_finite() && lambda_plus.is_finite()) {
            return Err(Error::invalid("clip bounds must be positive and finite"));
        }
        if lambda_minus > lambda_plus {
            return Err(Error::invalid("lambda_minus must not exceed lambda_plus"));
        }
        Ok(Self {
            lambda_minus,
            lambda_plus,
        })
    }
}

/// First and second moment estimates together with the counts they used.
#[derive(Debug, Clone)]
pub struct MomentEstimates {
    pub gamma_hat: DVector<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub counts: SampleCounts,
}

impl MomentEstimates {
    /// Computes the partition and counts for `dataset` and both moment
    /// estimates in one call.
    pub fn estimate(dataset: &MissingDataset) -> Result<Self> {
        let partition = crate::patterns::partition_modalities(dataset);
        let counts = crate::patterns::compute_counts(dataset, &partition);
        let gamma_hat = estimate_gamma(dataset, &partition, &counts)?;
        let sigma_hat = estimate_covariance_pairwise(dataset, &partition, &counts)?;
        Ok(Self {
            gamma_hat,
            sigma_hat,
            counts,
        })
    }
}

/// Recursive pairwise (cascade) summation. A block-duplicated range of
/// length `2n` splits at the midpoint into two copies of the single-copy
/// computation, so its sum is exactly twice the single-copy value; this
/// keeps the moment estimators invariant under dataset duplication.
pub(crate) fn pairwise_sum(len: usize, f: &mut impl FnMut(usize) -> f64) -> f64 {
    fn go(offset: usize, len: usize, f: &mut impl FnMut(usize) -> f64) -> f64 {
        if len <= 2 {
            let mut s = 0.0;
            for i in 0..len {
                s += f(offset + i);
            }
            return s;
        }
        let half = len / 2;
        go(offset, half, f) + go(offset + half, len - half, f)
    }
    go(0, len, f)
}

/// Unbiased estimate of `gamma = E[XY]`: per variable, the mean of `X_j Y`
/// over the labelled rows observing `j`.
pub fn estimate_gamma(
    dataset: &MissingDataset,
    partition: &ModalityPartition,
    counts: &SampleCounts,
) -> Result<DVector<f64>> {
    let p = dataset.p();
    if let Some(l) = counts.h().iter().position(|&h| h == 0) {
        return Err(Error::ModalityNeverLabelled(l));
    }
    let mut num = DVector::zeros(p);
    for g in dataset.groups() {
        let x = g.x();
        let y = g.y();
        for (c, &j) in g.pattern().observed().iter().enumerate() {
            num[j] += pairwise_sum(x.nrows(), &mut |r| x[(r, c)] * y[r]);
        }
    }
    let mut gamma = num;
    for j in 0..p {
        gamma[j] /= counts.h()[partition.label(j)] as f64;
    }
    Ok(gamma)
}

/// Unbiased pairwise-complete estimate of the second moment matrix: entry
/// `(i, j)` averages `X_i X_j` over the unlabelled rows and the labelled rows
/// observing both variables. Symmetric by construction; possibly indefinite.
pub fn estimate_covariance_pairwise(
    dataset: &MissingDataset,
    partition: &ModalityPartition,
    counts: &SampleCounts,
) -> Result<DMatrix<f64>> {
    let p = dataset.p();
    let n_u = dataset.n_unlabelled();
    crate::patterns::check_pair_coverage(counts, n_u)?;

    let mut num = DMatrix::zeros(p, p);
    let u = dataset.unlabelled();
    if n_u > 0 {
        for i in 0..p {
            for j in i..p {
                num[(i, j)] = pairwise_sum(n_u, &mut |r| u[(r, i)] * u[(r, j)]);
            }
        }
    }
    for g in dataset.groups() {
        let x = g.x();
        let observed = g.pattern().observed();
        for (a, &i) in observed.iter().enumerate() {
            for (b, &j) in observed.iter().enumerate().skip(a) {
                num[(i, j)] += pairwise_sum(x.nrows(), &mut |r| x[(r, a)] * x[(r, b)]);
            }
        }
    }

    let mut sigma = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let denom = (counts.n_cross(partition.label(i), partition.label(j)) + n_u) as f64;
            let v = num[(i, j)] / denom;
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    // The estimator is symmetric in exact arithmetic; the averaging kills any
    // residual floating-point asymmetry before eigendecompositions downstream.
    linalg::symmetrize(&mut sigma);
    Ok(sigma)
}

/// Second moment matrix `(1/n) X^T X` of a fully observed block, e.g. the
/// unlabelled data alone.
pub fn second_moment(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let p = x.ncols();
    if n == 0 {
        return Err(Error::invalid("second_moment needs at least one row"));
    }
    let mut sigma = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let v = pairwise_sum(n, &mut |r| x[(r, i)] * x[(r, j)]) / n as f64;
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    Ok(sigma)
}

/// Clips a symmetric estimate to a positive-definite one: returns the input
/// unchanged when its spectrum lies in `[lambda_minus/2, 2*lambda_plus]`,
/// otherwise `lambda_minus * I` with the flag set.
pub fn clip_covariance(sigma_hat: &DMatrix<f64>, clip: &ClipConfig) -> (DMatrix<f64>, bool) {
    let (eig_min, eig_max) = linalg::eigen_range(sigma_hat);
    if eig_min >= clip.lambda_minus / 2.0 - EIG_TOL && eig_max <= 2.0 * clip.lambda_plus + EIG_TOL {
        (sigma_hat.clone(), false)
    } else {
        (
            DMatrix::identity(sigma_hat.nrows(), sigma_hat.ncols()) * clip.lambda_minus,
            true,
        )
    }
}

/// Result of the restricted-eigenvalue search: the best quotient found, the
/// support set it used and the witness direction.
#[derive(Debug, Clone)]
pub struct REResult {
    pub phi_squared: f64,
    pub witness_s: Vec<usize>,
    pub witness_delta: DVector<f64>,
}

/// Restricted eigenvalue `phi^2(A, s)`: the infimum of
/// `delta^T A delta / ||delta_M||^2` over supports `|S| <= s` and cone
/// vectors `||delta_{S^c}||_1 <= ||delta_S||_1`, where `M` augments `S` with
/// the `s` largest remaining coordinates of `delta`.
///
/// Supports are enumerated exactly; the inner minimisation runs projected
/// gradient descent from 64 random cone-feasible unit starts plus the
/// coordinate vectors of `S`. The returned value is an upper bound on the
/// true infimum. Diagnostic scale only: `p <= 12`, `s <= 3`.
pub fn restricted_eigenvalue(a: &DMatrix<f64>, s: usize) -> Result<REResult> {
    let p = a.nrows();
    if p == 0 || a.ncols() != p {
        return Err(Error::invalid("restricted_eigenvalue needs a square matrix"));
    }
    if s == 0 {
        return Err(Error::invalid("sparsity s must be at least 1"));
    }
    if p > RE_MAX_P || s > RE_MAX_S {
        return Err(Error::ScaleExceeded {
            p,
            s,
            max_p: RE_MAX_P,
            max_s: RE_MAX_S,
        });
    }

    let mut best: Option<REResult> = None;
    let mut rng = ChaCha8Rng::seed_from_u64(0x7265_5f64);
    let mut subset = Vec::new();
    enumerate_subsets(p, s.min(p), &mut subset, &mut |support| {
        let (value, delta) = minimise_over_cone(a, support, s, &mut rng);
        if best.as_ref().is_none_or(|b| value < b.phi_squared) {
            best = Some(REResult {
                phi_squared: value,
                witness_s: support.to_vec(),
                witness_delta: delta,
            });
        }
    });

    Ok(best.expect("at least one support"))
}

fn enumerate_subsets(
    p: usize,
    max_size: usize,
    current: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    fn go(
        start: usize,
        p: usize,
        max_size: usize,
        current: &mut Vec<usize>,
        visit: &mut impl FnMut(&[usize]),
    ) {
        if !current.is_empty() {
            visit(current);
        }
        if current.len() == max_size {
            return;
        }
        for j in start..p {
            current.push(j);
            go(j + 1, p, max_size, current, visit);
            current.pop();
        }
    }
    go(0, p, max_size, current, visit);
}

/// The index set `M(delta)` for a fixed support `S`.
fn m_set(delta: &DVector<f64>, support: &[usize], s: usize, in_support: &[bool]) -> Vec<bool> {
    let p = delta.len();
    let mut m = in_support.to_vec();
    let mut outside: Vec<(f64, usize)> = (0..p)
        .filter(|&j| !in_support[j])
        .map(|j| (delta[j].abs(), j))
        .collect();
    if outside.is_empty() {
        return m;
    }
    let keep = s.min(outside.len());
    outside.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let threshold = outside[keep - 1].0;
    for &(v, j) in &outside {
        if v >= threshold {
            m[j] = true;
        }
    }
    let _ = support;
    m
}

/// Quotient `delta^T A delta / ||delta_M||^2`. The denominator accumulates in
/// index order so that, for `A = I`, the quotient never dips below 1 in
/// floating point.
fn quotient(a: &DMatrix<f64>, delta: &DVector<f64>, m: &[bool]) -> f64 {
    let ad = a * delta;
    let num = delta.dot(&ad);
    let mut den = 0.0;
    for (j, &inside) in m.iter().enumerate() {
        if inside {
            den += delta[j] * delta[j];
        }
    }
    if den <= 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

fn evaluate(a: &DMatrix<f64>, delta: &DVector<f64>, support: &[usize], s: usize, in_support: &[bool]) -> f64 {
    let m = m_set(delta, support, s, in_support);
    quotient(a, delta, &m)
}

/// Rescales the off-support part so the cone constraint holds, then
/// normalises to unit length. Returns `None` when the vector collapses.
fn project_cone(mut delta: DVector<f64>, in_support: &[bool]) -> Option<DVector<f64>> {
    let norm_s: f64 = delta
        .iter()
        .zip(in_support)
        .filter(|(_, &m)| m)
        .map(|(v, _)| v.abs())
        .sum();
    let norm_sc: f64 = delta
        .iter()
        .zip(in_support)
        .filter(|(_, &m)| !m)
        .map(|(v, _)| v.abs())
        .sum();
    if norm_sc > norm_s {
        if norm_s == 0.0 {
            return None;
        }
        let scale = norm_s / norm_sc;
        for (v, &m) in delta.iter_mut().zip(in_support) {
            if !m {
                *v *= scale;
            }
        }
    }
    let norm = delta.norm();
    if norm == 0.0 || !norm.is_finite() {
        None
    } else {
        Some(delta / norm)
    }
}

const RE_STARTS: usize = 64;
const RE_STEPS: usize = 500;
const RE_STEP_SIZE: f64 = 1e-2;

fn minimise_over_cone(
    a: &DMatrix<f64>,
    support: &[usize],
    s: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, DVector<f64>) {
    let p = a.nrows();
    let mut in_support = vec![false; p];
    for &j in support {
        in_support[j] = true;
    }

    let mut best_val = f64::INFINITY;
    let mut best_delta = DVector::zeros(p);

    // Deterministic starts: coordinate vectors on S. These evaluate the
    // quotient exactly (1.0 for the identity) before any gradient noise.
    for &j in support {
        let mut delta = DVector::zeros(p);
        delta[j] = 1.0;
        let val = evaluate(a, &delta, support, s, &in_support);
        if val < best_val {
            best_val = val;
            best_delta = delta;
        }
    }

    for _ in 0..RE_STARTS {
        let mut delta = DVector::from_fn(p, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let Some(start) = project_cone(delta.clone(), &in_support) else {
            continue;
        };
        delta = start;
        let mut current = evaluate(a, &delta, support, s, &in_support);

        for _ in 0..RE_STEPS {
            let m = m_set(&delta, support, s, &in_support);
            let ad = a * &delta;
            let num = delta.dot(&ad);
            let den: f64 = m
                .iter()
                .enumerate()
                .filter(|(_, &inside)| inside)
                .map(|(j, _)| delta[j] * delta[j])
                .sum();
            if den <= 0.0 {
                break;
            }
            // Gradient of num/den with M held fixed.
            let mut grad = ad * (2.0 / den);
            for (j, &inside) in m.iter().enumerate() {
                if inside {
                    grad[j] -= 2.0 * num / (den * den) * delta[j];
                }
            }
            let gnorm = grad.norm();
            if gnorm < 1e-14 {
                break;
            }

            let mut eta = RE_STEP_SIZE;
            let mut improved = false;
            while eta > 1e-9 {
                let candidate = &delta - &grad * (eta / gnorm.max(1.0));
                if let Some(next) = project_cone(candidate, &in_support) {
                    let val = evaluate(a, &next, support, s, &in_support);
                    if val < current - 1e-15 {
                        delta = next;
                        current = val;
                        improved = true;
                        break;
                    }
                }
                eta *= 0.5;
            }
            if !improved {
                break;
            }
        }

        if current < best_val {
            best_val = current;
            best_delta = delta;
        }
    }

    (best_val, best_delta)
}
