//! The modified Dantzig selector: minimise `||beta||_1` subject to
//! `||sigma_hat * beta - gamma_hat||_inf <= lambda`, with the moments taken
//! from pairwise-complete sums so the constraint matrix may be indefinite.
//! The program stays a linear program regardless, and is solved by a
//! deterministic dense simplex.

mod simplex;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::moments::{self, MomentEstimates};
use crate::patterns::{MissingDataset, SampleCounts};

pub use simplex::{SimplexStatus, PIVOT_TOL};

/// One instance of the selector program.
#[derive(Debug, Clone)]
pub struct DantzigProblem {
    pub sigma_hat: DMatrix<f64>,
    pub gamma_hat: DVector<f64>,
    pub lambda: f64,
}

impl DantzigProblem {
    pub fn new(sigma_hat: DMatrix<f64>, gamma_hat: DVector<f64>, lambda: f64) -> Result<Self> {
        if sigma_hat.nrows() != sigma_hat.ncols() || sigma_hat.nrows() != gamma_hat.len() {
            return Err(Error::invalid("sigma_hat and gamma_hat dimensions disagree"));
        }
        if !(lambda >= 0.0) {
            return Err(Error::invalid("lambda must be nonnegative"));
        }
        Ok(Self {
            sigma_hat,
            gamma_hat,
            lambda,
        })
    }
}

/// Outcome status of one program solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    IterationCap,
}

/// Solution of the selector program.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub beta: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub status: LpStatus,
}

/// Standard-form translation of a [`DantzigProblem`]: variables
/// `u_1..u_p, v_1..v_p >= 0` with `beta = u - v`, objective
/// `sum_i (u_i + v_i)` and the sup-norm constraint unrolled into `2p`
/// inequalities.
#[derive(Debug, Clone)]
pub struct StandardFormLp {
    c: Vec<f64>,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    p: usize,
    /// Whether `beta = 0` is feasible, i.e. `lambda >= ||gamma_hat||_inf`.
    pub zero_feasible: bool,
}

impl StandardFormLp {
    pub fn num_rows(&self) -> usize {
        self.a.len()
    }

    pub fn num_cols(&self) -> usize {
        self.c.len()
    }
}

/// Unrolls the program into standard form with deterministic column order
/// `u_1..u_p, v_1..v_p`.
pub fn build_lp(problem: &DantzigProblem) -> StandardFormLp {
    let p = problem.gamma_hat.len();
    let sigma = &problem.sigma_hat;
    let gamma = &problem.gamma_hat;
    let lambda = problem.lambda;

    let mut a = Vec::with_capacity(2 * p);
    let mut b = Vec::with_capacity(2 * p);
    for i in 0..p {
        let mut row = vec![0.0; 2 * p];
        for j in 0..p {
            row[j] = sigma[(i, j)];
            row[p + j] = -sigma[(i, j)];
        }
        a.push(row);
        b.push(gamma[i] + lambda);
    }
    for i in 0..p {
        let mut row = vec![0.0; 2 * p];
        for j in 0..p {
            row[j] = -sigma[(i, j)];
            row[p + j] = sigma[(i, j)];
        }
        a.push(row);
        b.push(lambda - gamma[i]);
    }

    let gamma_inf = gamma.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    StandardFormLp {
        c: vec![1.0; 2 * p],
        a,
        b,
        p,
        zero_feasible: lambda >= gamma_inf,
    }
}

/// Runs the two-phase simplex on a built program and recovers
/// `beta = u - v`. `Err(UnboundedLp)` cannot occur for programs produced by
/// [`build_lp`] except under numerical degeneracy, and is surfaced rather
/// than silently mapped to another status.
pub fn lp_solve(lp: &StandardFormLp) -> Result<LpSolution> {
    let out = simplex::solve(&lp.c, &lp.a, &lp.b);
    let status = match out.status {
        SimplexStatus::Optimal => LpStatus::Optimal,
        SimplexStatus::Infeasible => LpStatus::Infeasible,
        SimplexStatus::IterationCap => LpStatus::IterationCap,
        SimplexStatus::Unbounded => return Err(Error::UnboundedLp),
    };
    let beta = DVector::from_fn(lp.p, |i, _| out.x[i] - out.x[lp.p + i]);
    Ok(LpSolution {
        beta,
        objective: out.objective,
        iterations: out.iterations,
        status,
    })
}

/// Builds and solves one program.
pub fn solve_problem(problem: &DantzigProblem) -> Result<LpSolution> {
    lp_solve(&build_lp(problem))
}

/// Regularisation inputs shared by the theorem-driven rules. `sigma` and
/// `beta_norm` may be oracle values or plug-ins from a pilot fit.
#[derive(Debug, Clone, Copy)]
pub struct LambdaInputs {
    /// Leading constant `A`.
    pub a: f64,
    /// Sub-Gaussian scale of the covariates.
    pub r_x: f64,
    /// Noise level.
    pub sigma: f64,
    /// `||beta*||_2` or an estimate of it.
    pub beta_norm: f64,
}

/// Rule for the unstructured (balanced) setting: a two-branch maximum over a
/// labelled-data term at observation rate `rho` and a covariance term fed by
/// `rho^2 n_L + N` effective samples.
pub fn lambda_unstructured(
    inputs: &LambdaInputs,
    p: usize,
    rho: f64,
    n_labelled: usize,
    n_unlabelled: usize,
) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid("rho must lie in (0, 1)"));
    }
    if n_labelled == 0 || p == 0 {
        return Err(Error::invalid("need labelled data and positive dimension"));
    }
    let log_p = (p as f64).ln();
    let n_l = n_labelled as f64;
    let noise = inputs.sigma + inputs.r_x * inputs.beta_norm;
    let first = inputs.r_x * inputs.r_x * noise * noise * log_p / (rho * n_l);
    let second = inputs.r_x.powi(4) * inputs.beta_norm * inputs.beta_norm * log_p
        / (rho * rho * n_l + n_unlabelled as f64);
    Ok(inputs.a * first.max(second).sqrt())
}

/// Rule for the structured (blockwise) setting: per-modality terms driven by
/// `h_l` and by `N + min_g n_{g,h}`.
pub fn lambda_structured(
    inputs: &LambdaInputs,
    counts: &SampleCounts,
    modality_sizes: &[usize],
    n_unlabelled: usize,
) -> Result<f64> {
    let l = counts.num_modalities();
    if l == 0 || modality_sizes.len() != l {
        return Err(Error::invalid("modality sizes do not match counts"));
    }
    let l_f = l as f64;
    let noise = inputs.sigma + inputs.r_x * inputs.beta_norm;

    let mut first: f64 = 0.0;
    for (g, (&h, &size)) in counts.h().iter().zip(modality_sizes).enumerate() {
        if h == 0 {
            return Err(Error::ModalityNeverLabelled(g));
        }
        let log_term = (2.0 * l_f * size as f64).ln();
        first = first.max((inputs.r_x * inputs.r_x * noise * noise * log_term / h as f64).sqrt());
    }

    let mut second: f64 = 0.0;
    for (h, &size) in modality_sizes.iter().enumerate() {
        let min_cross = (0..l).map(|g| counts.n_cross(g, h)).min().unwrap();
        let denom = (n_unlabelled + min_cross) as f64;
        if denom == 0.0 {
            return Err(Error::PairNeverObserved(h, h));
        }
        let log_term = (2.0 * l_f * size as f64).ln();
        let term = inputs.r_x.powi(4) * inputs.beta_norm * inputs.beta_norm * log_term / denom;
        second = second.max(l_f * term.sqrt());
    }

    Ok(inputs.a * first.max(second))
}

/// How to pick the regularisation parameter for [`fit_dantzig`].
#[derive(Debug, Clone)]
pub enum LambdaSpec {
    Fixed(f64),
    Unstructured { inputs: LambdaInputs, rho: f64 },
    Structured { inputs: LambdaInputs },
}

/// Result of a full selector fit.
#[derive(Debug, Clone)]
pub struct DantzigFit {
    pub beta: DVector<f64>,
    pub lambda: f64,
    pub objective: f64,
    pub iterations: usize,
    /// Labelled rows observing each variable (unit-weight effective sample
    /// sizes), as a diagnostic.
    pub alpha_hat: DVector<f64>,
}

/// Fits the selector on a dataset: builds `gamma_hat` and `sigma_hat` from
/// the pairwise-complete sums, resolves `lambda` and solves the program.
/// Non-optimal solver outcomes become errors.
pub fn fit_dantzig(dataset: &MissingDataset, lambda_spec: &LambdaSpec) -> Result<DantzigFit> {
    let partition = crate::patterns::partition_modalities(dataset);
    let counts = crate::patterns::compute_counts(dataset, &partition);
    let gamma_hat = moments::estimate_gamma(dataset, &partition, &counts)?;
    let sigma_hat = moments::estimate_covariance_pairwise(dataset, &partition, &counts)?;

    let lambda = match lambda_spec {
        LambdaSpec::Fixed(v) => {
            if !(*v >= 0.0) {
                return Err(Error::invalid("lambda must be nonnegative"));
            }
            *v
        }
        LambdaSpec::Unstructured { inputs, rho } => lambda_unstructured(
            inputs,
            dataset.p(),
            *rho,
            dataset.n_labelled(),
            dataset.n_unlabelled(),
        )?,
        LambdaSpec::Structured { inputs } => lambda_structured(
            inputs,
            &counts,
            partition.sizes(),
            dataset.n_unlabelled(),
        )?,
    };

    let problem = DantzigProblem::new(sigma_hat, gamma_hat, lambda)?;
    let solution = solve_problem(&problem)?;
    match solution.status {
        LpStatus::Optimal => {
            let mut alpha_hat = DVector::zeros(dataset.p());
            for g in dataset.groups() {
                for &j in g.pattern().observed() {
                    alpha_hat[j] += g.n() as f64;
                }
            }
            Ok(DantzigFit {
                beta: solution.beta,
                lambda,
                objective: solution.objective,
                iterations: solution.iterations,
                alpha_hat,
            })
        }
        LpStatus::Infeasible => Err(Error::Infeasible),
        LpStatus::IterationCap => Err(Error::IterationCap),
    }
}

/// Log-spaced grid from `0.01 * ||gamma_hat||_inf` to `||gamma_hat||_inf`.
pub fn default_lambda_grid(gamma_hat: &DVector<f64>, size: usize) -> Result<Vec<f64>> {
    let top = gamma_hat.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if !(top > 0.0) {
        return Err(Error::invalid(
            "gamma_hat is identically zero; no sensible lambda grid exists",
        ));
    }
    if size < 2 {
        return Ok(vec![top]);
    }
    let lo = (0.01 * top).ln();
    let hi = top.ln();
    Ok((0..size)
        .map(|i| (lo + (hi - lo) * i as f64 / (size - 1) as f64).exp())
        .collect())
}

/// One row of the cross-validation table.
#[derive(Debug, Clone)]
pub struct CvEntry {
    pub lambda: f64,
    pub mean_loss: f64,
    pub fold_losses: Vec<f64>,
}

/// K-fold cross-validation for the regularisation parameter. Labelled rows
/// are split within each pattern; per fold, the selector is fitted on the
/// training moments and scored on the held-out moments with the quadratic
/// surrogate `beta^T Sigma_val beta - 2 beta^T gamma_val` (the validation
/// prediction risk up to a beta-free constant). Ties pick the larger lambda.
pub fn cross_validate_lambda(
    dataset: &MissingDataset,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<(f64, Vec<CvEntry>)> {
    if grid.is_empty() || grid.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::invalid("lambda grid must be non-empty and nonnegative"));
    }
    if folds < 2 {
        return Err(Error::invalid("need at least two folds"));
    }
    if dataset.n_labelled() < folds {
        return Err(Error::FoldTooSmall);
    }

    let mut sorted_grid = grid.to_vec();
    sorted_grid.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // Seeded assignment: shuffle each pattern's rows and deal them
    // round-robin. The dealing offset carries across groups so that
    // single-row patterns spread over all folds instead of piling into the
    // first one.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment: Vec<Vec<usize>> = Vec::with_capacity(dataset.num_patterns());
    let mut carry = 0usize;
    for g in dataset.groups() {
        let n = g.n();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut fold_of = vec![0usize; n];
        for (pos, &row) in order.iter().enumerate() {
            fold_of[row] = (carry + pos) % folds;
        }
        carry = (carry + n) % folds;
        assignment.push(fold_of);
    }

    struct FoldData {
        train: MomentEstimates,
        val_gamma: DVector<f64>,
        val_sigma: DMatrix<f64>,
    }

    let mut fold_data = Vec::with_capacity(folds);
    for f in 0..folds {
        let train = dataset
            .filter_rows(|g, r| assignment[g][r] != f)
            .map_err(|_| Error::FoldTooSmall)?;
        let train_moments = MomentEstimates::estimate(&train).map_err(|_| Error::FoldTooSmall)?;
        let (val_gamma, val_sigma) =
            validation_moments(dataset, |g, r| assignment[g][r] == f)?;
        fold_data.push(FoldData {
            train: train_moments,
            val_gamma,
            val_sigma,
        });
    }

    // All (fold, lambda) cells are independent solves.
    let jobs: Vec<(usize, usize)> = (0..folds)
        .flat_map(|f| (0..sorted_grid.len()).map(move |i| (f, i)))
        .collect();
    let losses: Vec<((usize, usize), f64)> = jobs
        .par_iter()
        .map(|&(f, i)| {
            let fd = &fold_data[f];
            let problem = DantzigProblem {
                sigma_hat: fd.train.sigma_hat.clone(),
                gamma_hat: fd.train.gamma_hat.clone(),
                lambda: sorted_grid[i],
            };
            let loss = match solve_problem(&problem) {
                Ok(sol) if sol.status == LpStatus::Optimal => {
                    let quad = sol.beta.dot(&(&fd.val_sigma * &sol.beta));
                    quad - 2.0 * sol.beta.dot(&fd.val_gamma)
                }
                _ => f64::INFINITY,
            };
            ((f, i), loss)
        })
        .collect();

    let mut table: Vec<CvEntry> = sorted_grid
        .iter()
        .map(|&lambda| CvEntry {
            lambda,
            mean_loss: 0.0,
            fold_losses: vec![0.0; folds],
        })
        .collect();
    for ((f, i), loss) in losses {
        table[i].fold_losses[f] = loss;
    }
    for entry in &mut table {
        entry.mean_loss = entry.fold_losses.iter().sum::<f64>() / folds as f64;
    }

    // Ascending grid with `<=` keeps the larger lambda on ties.
    let mut best = 0usize;
    for i in 1..table.len() {
        if table[i].mean_loss <= table[best].mean_loss {
            best = i;
        }
    }
    Ok((table[best].lambda, table))
}

/// Moments of the held-out rows. Entries whose denominator is empty carry no
/// validation information and are set to zero; the unlabelled block backs the
/// second-moment denominators so sparse folds still score.
fn validation_moments(
    dataset: &MissingDataset,
    in_val: impl Fn(usize, usize) -> bool,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = dataset.p();
    let mut gamma_num = DVector::<f64>::zeros(p);
    let mut gamma_den = vec![0usize; p];
    let mut sigma_num = DMatrix::<f64>::zeros(p, p);
    let mut sigma_den = DMatrix::<f64>::zeros(p, p);

    for (gi, g) in dataset.groups().iter().enumerate() {
        let observed = g.pattern().observed();
        let x = g.x();
        let y = g.y();
        for r in 0..g.n() {
            if !in_val(gi, r) {
                continue;
            }
            for (a, &i) in observed.iter().enumerate() {
                gamma_num[i] += x[(r, a)] * y[r];
                gamma_den[i] += 1;
                for (b, &j) in observed.iter().enumerate().skip(a) {
                    let v = x[(r, a)] * x[(r, b)];
                    sigma_num[(i, j)] += v;
                    sigma_den[(i, j)] += 1.0;
                }
            }
        }
    }
    let u = dataset.unlabelled();
    for r in 0..u.nrows() {
        for i in 0..p {
            for j in i..p {
                sigma_num[(i, j)] += u[(r, i)] * u[(r, j)];
                sigma_den[(i, j)] += 1.0;
            }
        }
    }

    let mut gamma = DVector::zeros(p);
    for j in 0..p {
        if gamma_den[j] > 0 {
            gamma[j] = gamma_num[j] / gamma_den[j] as f64;
        }
    }
    let mut sigma = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            if sigma_den[(i, j)] > 0.0 {
                let v = sigma_num[(i, j)] / sigma_den[(i, j)];
                sigma[(i, j)] = v;
                sigma[(j, i)] = v;
            }
        }
    }
    Ok((gamma, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::{group_by_pattern, RawRow};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn scalar_equality_instance() {
        let problem = DantzigProblem::new(
            DMatrix::from_element(1, 1, 2.0),
            DVector::from_element(1, 4.0),
            0.0,
        )
        .unwrap();
        let sol = solve_problem(&problem).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_relative_eq!(sol.beta[0], 2.0, epsilon = 1e-10);
        assert_relative_eq!(sol.objective, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn large_lambda_gives_zero_exactly() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let gamma = DVector::from_vec(vec![0.5, -0.25]);
        let problem = DantzigProblem::new(sigma, gamma, 0.5).unwrap();
        let lp = build_lp(&problem);
        assert!(lp.zero_feasible);
        let sol = lp_solve(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_eq!(sol.beta[0], 0.0);
        assert_eq!(sol.beta[1], 0.0);
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn infeasible_singular_instance() {
        // Singular sigma with inconsistent gamma at lambda = 0: rows demand
        // both beta_sum = 1 and beta_sum = 2.
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let gamma = DVector::from_vec(vec![1.0, 2.0]);
        let problem = DantzigProblem::new(sigma, gamma, 0.0).unwrap();
        let sol = solve_problem(&problem).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn feasibility_within_slack_on_optimal() {
        let sigma = DMatrix::from_row_slice(3, 3, &[2.0, 0.4, 0.1, 0.4, 1.5, -0.2, 0.1, -0.2, 1.0]);
        let gamma = DVector::from_vec(vec![1.0, -0.5, 0.25]);
        for &lambda in &[0.0, 0.1, 0.4] {
            let problem = DantzigProblem::new(sigma.clone(), gamma.clone(), lambda).unwrap();
            let sol = solve_problem(&problem).unwrap();
            assert_eq!(sol.status, LpStatus::Optimal);
            let resid = &sigma * &sol.beta - &gamma;
            let inf = resid.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            assert!(inf <= lambda + 1e-8, "residual {inf} exceeds {lambda}");
            let l1: f64 = sol.beta.iter().map(|v| v.abs()).sum();
            assert!((l1 - sol.objective).abs() <= 1e-10);
        }
    }

    #[test]
    fn lambda_unstructured_arithmetic() {
        // A = 1, R_X = 1, sigma = 1, ||beta|| = 1, rho = 1/2, n_L = 8, N = 0:
        // lambda = sqrt(max{ (1+1)^2 log(p) / 4, log(p) / 2 }) = sqrt(log p).
        // (With log p = 1 this is the unit-value sanity point.)
        let inputs = LambdaInputs {
            a: 1.0,
            r_x: 1.0,
            sigma: 1.0,
            beta_norm: 1.0,
        };
        let got = lambda_unstructured(&inputs, 3, 0.5, 8, 0).unwrap();
        let log3 = 3.0f64.ln();
        let expected = (4.0 * log3 / 4.0).max(log3 / 2.0).sqrt();
        assert_relative_eq!(got, expected, epsilon = 1e-14);
        assert_relative_eq!(expected, log3.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn lambda_unstructured_limits() {
        let inputs = LambdaInputs {
            a: 1.0,
            r_x: 1.0,
            sigma: 1.0,
            beta_norm: 1.0,
        };
        // Huge N kills the second branch.
        let lam = lambda_unstructured(&inputs, 20, 0.5, 100, 1_000_000_000).unwrap();
        let expected = (1.0 * 4.0 * (20f64).ln() / (0.5 * 100.0)).sqrt();
        assert_relative_eq!(lam, expected, max_relative = 1e-9);
        // beta_norm = 0 reduces to the noise-only branch.
        let inputs0 = LambdaInputs {
            beta_norm: 0.0,
            ..inputs
        };
        let lam0 = lambda_unstructured(&inputs0, 20, 0.5, 100, 0).unwrap();
        let expected0 = 1.0 * 1.0 * ((20f64).ln() / (0.5 * 100.0)).sqrt();
        assert_relative_eq!(lam0, expected0, max_relative = 1e-12);
    }

    fn monotonic_dataset(n1: usize, n2: usize, p: usize) -> MissingDataset {
        let mut rows: Vec<RawRow> = Vec::new();
        let mut seed = 1u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for _ in 0..n1 {
            let cov: Vec<Option<f64>> = (0..p).map(|_| Some(next())).collect();
            rows.push((cov, Some(next())));
        }
        for _ in 0..n2 {
            let mut cov: Vec<Option<f64>> = (0..p).map(|_| Some(next())).collect();
            cov[p - 1] = None;
            rows.push((cov, Some(next())));
        }
        group_by_pattern(&rows).unwrap()
    }

    #[test]
    fn lambda_structured_single_modality_matches_hand_formula() {
        let ds = monotonic_dataset(30, 0, 4);
        let partition = crate::patterns::partition_modalities(&ds);
        let counts = crate::patterns::compute_counts(&ds, &partition);
        assert_eq!(counts.num_modalities(), 1);
        let inputs = LambdaInputs {
            a: 2.0,
            r_x: 1.5,
            sigma: 1.0,
            beta_norm: 0.5,
        };
        let n = 30.0;
        let got = lambda_structured(&inputs, &counts, partition.sizes(), 10).unwrap();
        let log_term = (2.0f64 * 1.0 * 4.0).ln();
        let noise = 1.0 + 1.5 * 0.5;
        let first = (1.5f64 * 1.5 * noise * noise * log_term / n).sqrt();
        let second = (1.5f64.powi(4) * 0.25 * log_term / (10.0 + n)).sqrt();
        assert_relative_eq!(got, 2.0 * first.max(second), max_relative = 1e-12);
    }

    #[test]
    fn lambda_structured_monotonic_structure() {
        // Simple monotonic counts: h = (n1 + n2, n1), all cross counts n1.
        let ds = monotonic_dataset(20, 200, 5);
        let partition = crate::patterns::partition_modalities(&ds);
        let counts = crate::patterns::compute_counts(&ds, &partition);
        assert_eq!(counts.num_modalities(), 2);
        let inputs = LambdaInputs {
            a: 1.0,
            r_x: 1.0,
            sigma: 1.0,
            beta_norm: 1.0,
        };
        let got = lambda_structured(&inputs, &counts, partition.sizes(), 0).unwrap();
        let l = 2.0f64;
        let noise = 2.0f64;
        let h: Vec<f64> = counts.h().iter().map(|&v| v as f64).collect();
        let sizes: Vec<f64> = partition.sizes().iter().map(|&v| v as f64).collect();
        let first = (0..2)
            .map(|g| (noise * noise * (2.0 * l * sizes[g]).ln() / h[g]).sqrt())
            .fold(0.0f64, f64::max);
        let second = (0..2)
            .map(|g| l * ((2.0 * l * sizes[g]).ln() / 20.0).sqrt())
            .fold(0.0f64, f64::max);
        assert_relative_eq!(got, first.max(second), max_relative = 1e-12);
    }

    #[test]
    fn cv_singleton_grid_returns_it() {
        let ds = monotonic_dataset(40, 40, 3);
        let (best, table) = cross_validate_lambda(&ds, &[0.37], 4, 9).unwrap();
        assert_eq!(best, 0.37);
        assert_eq!(table.len(), 1);
    }

    #[test]
    fn cv_is_deterministic() {
        let ds = monotonic_dataset(50, 50, 3);
        let grid = [0.05, 0.1, 0.5];
        let (best1, table1) = cross_validate_lambda(&ds, &grid, 5, 42).unwrap();
        let (best2, table2) = cross_validate_lambda(&ds, &grid, 5, 42).unwrap();
        assert_eq!(best1, best2);
        for (a, b) in table1.iter().zip(&table2) {
            assert_eq!(a.mean_loss, b.mean_loss);
            assert_eq!(a.fold_losses, b.fold_losses);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn objective_monotone_in_lambda(seed in 0u64..1000) {
            let mut s = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
            let mut next = || {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            };
            let p = 3;
            let raw = DMatrix::from_fn(p, p, |_, _| next());
            let sigma = &raw + raw.transpose();
            let gamma = DVector::from_fn(p, |_, _| next());
            let gamma_inf = gamma.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            let lambdas = [0.1 * gamma_inf, 0.5 * gamma_inf, gamma_inf];
            let mut objectives = Vec::new();
            for &lambda in &lambdas {
                let problem = DantzigProblem::new(sigma.clone(), gamma.clone(), lambda).unwrap();
                let sol = solve_problem(&problem).unwrap();
                if sol.status == LpStatus::Optimal {
                    objectives.push(sol.objective);
                } else {
                    objectives.push(f64::INFINITY);
                }
            }
            for w in objectives.windows(2) {
                prop_assert!(w[0] >= w[1] - 1e-9);
            }
        }
    }
}
