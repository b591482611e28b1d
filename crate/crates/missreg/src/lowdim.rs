//! The low-dimensional weighted-imputation estimator: per-pattern conditional
//! imputation of missing covariates followed by weighted least squares, with
//! oracle or data-driven weights, two-fold cross-fitting for the supervised
//! case and a thresholded variant for unstructured missingness.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::moments::{self, ClipConfig};
use crate::patterns::{MissingDataset, ObservationPattern, SampleCounts};

/// How a weight vector was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightProvenance {
    Oracle,
    Estimated,
    Unit,
}

/// Per-pattern weights `D_k`, aligned with the dataset's group order.
#[derive(Debug, Clone)]
pub struct WeightSet {
    weights: Vec<f64>,
    kappa: Option<(f64, f64)>,
    provenance: WeightProvenance,
}

impl WeightSet {
    pub fn new(
        weights: Vec<f64>,
        kappa: Option<(f64, f64)>,
        provenance: WeightProvenance,
    ) -> Result<Self> {
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights must be positive and finite"));
        }
        Ok(Self {
            weights,
            kappa,
            provenance,
        })
    }

    /// Unit weights for `k` patterns.
    pub fn unit(k: usize) -> Self {
        Self {
            weights: vec![1.0; k],
            kappa: None,
            provenance: WeightProvenance::Unit,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kappa(&self) -> Option<(f64, f64)> {
        self.kappa
    }

    pub fn provenance(&self) -> WeightProvenance {
        self.provenance
    }

    /// Rescaled copy; the fitted coefficients are invariant to this.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.weights.iter().map(|w| w * factor).collect(),
            self.kappa,
            self.provenance,
        )
    }
}

/// Where the plug-in covariance came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovSource {
    OssUnlabelled,
    SupervisedPairwise,
    User,
}

/// Result of a low-dimensional fit.
#[derive(Debug, Clone)]
pub struct LowDimFit {
    pub beta: DVector<f64>,
    pub weights: WeightSet,
    pub alpha_hat: DVector<f64>,
    pub cov_source: CovSource,
    pub thresholded: bool,
}

/// Conditional-mean projections `P_k = Sigma_{O_k O_k}^{-1} Sigma_{O_k}` for
/// every pattern of a dataset, computed from one positive-definite covariance
/// estimate.
#[derive(Debug, Clone)]
pub struct ProjectionSet {
    projections: Vec<DMatrix<f64>>,
}

impl ProjectionSet {
    pub fn compute(sigma_pd: &DMatrix<f64>, dataset: &MissingDataset) -> Result<Self> {
        let projections = dataset
            .groups()
            .iter()
            .map(|g| conditional_projection(sigma_pd, g.pattern()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { projections })
    }

    pub fn get(&self, k: usize) -> &DMatrix<f64> {
        &self.projections[k]
    }

    /// Imputes a full covariate vector from the observed coordinates of
    /// pattern `k`; observed coordinates are reproduced exactly.
    pub fn impute_row(&self, k: usize, x_obs: &DVector<f64>) -> DVector<f64> {
        self.projections[k].transpose() * x_obs
    }
}

/// Solves `Sigma_{OO} P = Sigma_{O}` by Cholesky. The observed columns of the
/// result are set to the exact identity, which they equal in exact
/// arithmetic, so imputation fixes observed coordinates bit-for-bit.
pub fn conditional_projection(
    sigma_pd: &DMatrix<f64>,
    pattern: &ObservationPattern,
) -> Result<DMatrix<f64>> {
    let p = sigma_pd.nrows();
    let observed = pattern.observed();
    let all: Vec<usize> = (0..p).collect();
    let sigma_oo = linalg::submatrix(sigma_pd, observed, observed);
    let sigma_o = linalg::submatrix(sigma_pd, observed, &all);
    let mut proj = linalg::solve_spd(&sigma_oo, &sigma_o, || Error::SingularBlock)?;
    for (a, &j) in observed.iter().enumerate() {
        for r in 0..observed.len() {
            proj[(r, j)] = if r == a { 1.0 } else { 0.0 };
        }
    }
    Ok(proj)
}

/// Schur complement `S_M = Sigma_MM - Sigma_MO Sigma_OO^{-1} Sigma_OM` of the
/// missing block of a pattern.
fn schur_complement(sigma: &DMatrix<f64>, pattern: &ObservationPattern) -> Result<DMatrix<f64>> {
    let missing = pattern.missing();
    let observed = pattern.observed();
    let sigma_mm = linalg::submatrix(sigma, &missing, &missing);
    let sigma_mo = linalg::submatrix(sigma, &missing, observed);
    let sigma_oo = linalg::submatrix(sigma, observed, observed);
    let solved = linalg::solve_spd(&sigma_oo, &sigma_mo.transpose(), || Error::SingularBlock)?;
    Ok(&sigma_mm - &sigma_mo * solved)
}

/// Oracle weights `D*_k = sigma^2 / (sigma^2 + beta_M^T S_M beta_M)` from the
/// true covariance, coefficients and noise level.
pub fn oracle_weights(
    noise_sd: f64,
    beta: &DVector<f64>,
    sigma: &DMatrix<f64>,
    patterns: &[&ObservationPattern],
) -> Result<WeightSet> {
    if !(noise_sd > 0.0) {
        return Err(Error::invalid("noise standard deviation must be positive"));
    }
    let sigma2 = noise_sd * noise_sd;
    let weights = patterns
        .iter()
        .map(|pat| weight_from_plugin(sigma2, beta, sigma, pat))
        .collect::<Result<Vec<_>>>()?;
    WeightSet::new(weights, None, WeightProvenance::Oracle)
}

fn weight_from_plugin(
    sigma2: f64,
    beta: &DVector<f64>,
    sigma: &DMatrix<f64>,
    pattern: &ObservationPattern,
) -> Result<f64> {
    if pattern.is_full() {
        return Ok(1.0);
    }
    let missing = pattern.missing();
    let s_m = schur_complement(sigma, pattern)?;
    let beta_m = DVector::from_fn(missing.len(), |i, _| beta[missing[i]]);
    let quad = (beta_m.transpose() * &s_m * &beta_m)[(0, 0)];
    Ok(sigma2 / (sigma2 + quad.max(0.0)))
}

/// Weights from a pilot coefficient estimate: plugs a consistent `beta` and a
/// residual-variance estimate into the oracle formula with the supplied
/// covariance estimate. This is the fallback when per-pattern regression is
/// not viable.
pub fn weights_from_pilot(
    dataset: &MissingDataset,
    sigma_pd: &DMatrix<f64>,
    pilot_beta: &DVector<f64>,
    pilot_sigma2: f64,
) -> Result<WeightSet> {
    if !(pilot_sigma2 > 0.0) {
        return Err(Error::invalid("pilot residual variance must be positive"));
    }
    let weights = dataset
        .groups()
        .iter()
        .map(|g| weight_from_plugin(pilot_sigma2, pilot_beta, sigma_pd, g.pattern()))
        .collect::<Result<Vec<_>>>()?;
    WeightSet::new(weights, None, WeightProvenance::Estimated)
}

/// Per-pattern weight estimation: regress the responses on the observed
/// covariates within each pattern, take the mean squared residual, clip it to
/// `[kappa_l, kappa_u]` (with the half/double guard bands) and invert.
pub fn estimate_weights(dataset: &MissingDataset, kappa_l: f64, kappa_u: f64) -> Result<WeightSet> {
    if !(kappa_l > 0.0 && kappa_l <= kappa_u) {
        return Err(Error::invalid("need 0 < kappa_l <= kappa_u"));
    }
    let mut weights = Vec::with_capacity(dataset.num_patterns());
    for (k, g) in dataset.groups().iter().enumerate() {
        let n = g.n();
        if n <= g.pattern().len() {
            return Err(Error::PatternTooSmall(k));
        }
        let phi = linalg::ols(g.x(), g.y(), || Error::SingularDesign(k))?;
        let residual = g.y() - g.x() * phi;
        let d_hat = residual.norm_squared() / n as f64;
        // The half/double guard bands snap the estimate to the nearer bound;
        // values inside the bands are clamped as well so every final weight
        // lies in [1/kappa_u, 1/kappa_l].
        let d_final = d_hat.clamp(kappa_l, kappa_u);
        weights.push(1.0 / d_final);
    }
    WeightSet::new(weights, Some((kappa_l, kappa_u)), WeightProvenance::Estimated)
}

/// Effective sample sizes `alpha_i = sum_k D_k n_k 1{i in O_k}`.
pub fn effective_sample_sizes(dataset: &MissingDataset, weights: &WeightSet) -> DVector<f64> {
    let mut alpha = DVector::zeros(dataset.p());
    for (g, &w) in dataset.groups().iter().zip(weights.weights()) {
        let contribution = w * g.n() as f64;
        for &j in g.pattern().observed() {
            alpha[j] += contribution;
        }
    }
    alpha
}

/// Accumulates the weighted Gram matrix `B = sum_k D_k P_k^T X_k^T X_k P_k`
/// and score vector `sum_k D_k P_k^T X_k^T y_k`.
fn weighted_normal_equations(
    dataset: &MissingDataset,
    projections: &ProjectionSet,
    weights: &WeightSet,
) -> (DMatrix<f64>, DVector<f64>) {
    let p = dataset.p();
    let mut gram = DMatrix::zeros(p, p);
    let mut score = DVector::zeros(p);
    for (k, g) in dataset.groups().iter().enumerate() {
        let w = weights.weights()[k];
        let proj = projections.get(k);
        let gram_k = g.x().transpose() * g.x();
        let xty = g.x().transpose() * g.y();
        gram += proj.transpose() * &gram_k * proj * w;
        score += proj.transpose() * xty * w;
    }
    (gram, score)
}

/// Fits the weighted-imputation estimator: missing covariates are replaced by
/// their conditional means under `sigma_pd` and the imputed rows enter a
/// weighted least squares problem with per-pattern weights.
pub fn fit_weighted_imputation(
    dataset: &MissingDataset,
    sigma_pd: &DMatrix<f64>,
    weights: &WeightSet,
) -> Result<LowDimFit> {
    if weights.weights().len() != dataset.num_patterns() {
        return Err(Error::invalid(format!(
            "weight count {} does not match pattern count {}",
            weights.weights().len(),
            dataset.num_patterns()
        )));
    }
    let projections = ProjectionSet::compute(sigma_pd, dataset)?;
    let (gram, score) = weighted_normal_equations(dataset, &projections, weights);
    let chol = linalg::cholesky_with_jitter(&gram, || {
        let (lo, hi) = linalg::eigen_range(&gram);
        Error::SingularGram {
            condition: if lo.abs() > 0.0 { hi / lo } else { f64::INFINITY },
        }
    })?;
    let beta = chol.solve(&score);
    if beta.iter().any(|v| !v.is_finite()) {
        let (lo, hi) = linalg::eigen_range(&gram);
        return Err(Error::SingularGram {
            condition: if lo.abs() > 0.0 { hi / lo } else { f64::INFINITY },
        });
    }
    let alpha_hat = effective_sample_sizes(dataset, weights);
    Ok(LowDimFit {
        beta,
        weights: weights.clone(),
        alpha_hat,
        cov_source: CovSource::User,
        thresholded: false,
    })
}

/// Unit-weight fit (single imputation): the estimator with `D_k = 1`.
pub fn fit_unit(dataset: &MissingDataset, sigma_pd: &DMatrix<f64>) -> Result<LowDimFit> {
    fit_weighted_imputation(dataset, sigma_pd, &WeightSet::unit(dataset.num_patterns()))
}

/// Default `(kappa_l, kappa_u)` from the complete-case residual variance:
/// `(s2/100, 100*s2)`. Loose bounds that only guard pathologies.
pub fn default_kappas(dataset: &MissingDataset) -> Result<(f64, f64)> {
    let (_, sigma2_cc) = complete_case_ols(dataset)?;
    if !(sigma2_cc > 0.0) {
        return Err(Error::invalid(
            "complete-case residual variance is zero; supply kappa bounds explicitly",
        ));
    }
    Ok((sigma2_cc / 100.0, 100.0 * sigma2_cc))
}

/// Ordinary least squares on the fully observed labelled rows, returning the
/// coefficients and the residual variance estimate `RSS / (n - p)`.
pub fn complete_case_ols(dataset: &MissingDataset) -> Result<(DVector<f64>, f64)> {
    let p = dataset.p();
    let group = dataset.complete_group().ok_or(Error::NoCompleteCases)?;
    if group.n() < p + 1 {
        return Err(Error::NoCompleteCases);
    }
    let beta = linalg::ols(group.x(), group.y(), || Error::SingularDesign(0))?;
    let residual = group.y() - group.x() * &beta;
    let sigma2 = residual.norm_squared() / (group.n() - p) as f64;
    Ok((beta, sigma2))
}

/// Two-fold cross-fit for the supervised case: each pattern is split in half
/// at random (seeded; odd rows favour fold one), each fold's covariance comes
/// from the other fold, weights come from the fold itself, and the two fits
/// are averaged.
pub fn fit_crossfit(
    dataset: &MissingDataset,
    kappa_l: f64,
    kappa_u: f64,
    clip: &ClipConfig,
    seed: u64,
) -> Result<LowDimFit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_one = Vec::with_capacity(dataset.num_patterns());
    for g in dataset.groups() {
        let n = g.n();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let mut mask = vec![false; n];
        for &i in idx.iter().take(n.div_ceil(2)) {
            mask[i] = true;
        }
        fold_one.push(mask);
    }
    fit_crossfit_with_split(dataset, &fold_one, kappa_l, kappa_u, clip)
}

/// Cross-fit with an explicit fold assignment (`true` = fold one), exposed so
/// constructed splits can be tested deterministically.
pub fn fit_crossfit_with_split(
    dataset: &MissingDataset,
    fold_one: &[Vec<bool>],
    kappa_l: f64,
    kappa_u: f64,
    clip: &ClipConfig,
) -> Result<LowDimFit> {
    for (k, g) in dataset.groups().iter().enumerate() {
        if g.n() < 2 * (g.pattern().len() + 1) {
            return Err(Error::PatternTooSmall(k));
        }
    }
    if fold_one.len() != dataset.num_patterns() {
        return Err(Error::invalid("fold assignment does not match group count"));
    }

    let fit_fold = |own_selector: &dyn Fn(usize, usize) -> bool| -> Result<LowDimFit> {
        let own = dataset.filter_rows(own_selector)?;
        let other = dataset.filter_rows(|g, r| !own_selector(g, r))?;
        let estimates = moments::MomentEstimates::estimate(&other)?;
        let (sigma_pd, _) = moments::clip_covariance(&estimates.sigma_hat, clip);
        let weights = estimate_weights(&own, kappa_l, kappa_u)?;
        fit_weighted_imputation(&own, &sigma_pd, &weights)
    };

    let fit1 = fit_fold(&|g, r| fold_one[g][r])?;
    let fit2 = fit_fold(&|g, r| !fold_one[g][r])?;

    let beta = (&fit1.beta + &fit2.beta) * 0.5;
    let avg_weights: Vec<f64> = fit1
        .weights
        .weights()
        .iter()
        .zip(fit2.weights.weights())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let weights = WeightSet::new(avg_weights, Some((kappa_l, kappa_u)), WeightProvenance::Estimated)?;
    let alpha_hat = effective_sample_sizes(dataset, &weights);
    Ok(LowDimFit {
        beta,
        weights,
        alpha_hat,
        cov_source: CovSource::SupervisedPairwise,
        thresholded: false,
    })
}

/// Defaults for the thresholded fit: `rho = min_g h_g / n_L` and `c_rho`
/// as the largest of the balancedness ratios implied by the counts.
pub fn default_rho_c_rho(counts: &SampleCounts, n_labelled: usize) -> (f64, f64) {
    let n_l = n_labelled as f64;
    let rho = (counts.min_h() as f64 / n_l).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    let l = counts.num_modalities();
    let mut c_rho: f64 = 1.0;
    for g in 0..l {
        c_rho = c_rho.max(counts.h()[g] as f64 / (rho * n_l));
        for h in 0..l {
            if g != h {
                c_rho = c_rho.max(counts.n_cross(g, h) as f64 / (rho * rho * n_l));
            }
        }
    }
    (rho, c_rho)
}

/// Thresholded unit-weight estimator for balanced unstructured missingness:
/// the weighted Gram matrix is replaced by `rho * n_L * I` when its scaled
/// spectrum leaves the admissible band derived from the clip bounds.
pub fn fit_thresholded_unstructured(
    dataset: &MissingDataset,
    sigma_pd: &DMatrix<f64>,
    rho: f64,
    c_rho: f64,
    clip: &ClipConfig,
) -> Result<LowDimFit> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid("rho must lie in (0, 1)"));
    }
    if !(c_rho >= 1.0) {
        return Err(Error::invalid("c_rho must be at least 1"));
    }
    let weights = WeightSet::unit(dataset.num_patterns());
    let projections = ProjectionSet::compute(sigma_pd, dataset)?;
    let (gram, score) = weighted_normal_equations(dataset, &projections, &weights);

    let scale = rho * dataset.n_labelled() as f64;
    let (lo, hi) = linalg::eigen_range(&(&gram / scale));
    let lminus = clip.lambda_minus;
    let plus = clip.lambda_plus;
    let lower = lminus * lminus * lminus / (32.0 * plus * plus);
    let upper = 32.0 * plus * plus * plus * c_rho / (lminus * lminus);

    let thresholded = lo < lower || hi > upper;
    let beta = if thresholded {
        &score / scale
    } else {
        let chol = linalg::cholesky_with_jitter(&gram, || {
            let (glo, ghi) = linalg::eigen_range(&gram);
            Error::SingularGram {
                condition: if glo.abs() > 0.0 { ghi / glo } else { f64::INFINITY },
            }
        })?;
        chol.solve(&score)
    };
    let alpha_hat = effective_sample_sizes(dataset, &weights);
    Ok(LowDimFit {
        beta,
        weights,
        alpha_hat,
        cov_source: CovSource::User,
        thresholded,
    })
}
