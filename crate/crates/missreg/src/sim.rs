//! Data generators, missingness injectors, baseline fits and the experiment
//! driver. Every generator is a pure function of its seed; replications run
//! in parallel with per-replication seeds `seed + rep` and a fixed
//! aggregation order, so reruns are bit-identical.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dantzig;
use crate::error::{Error, Result};
use crate::linalg;
use crate::lowdim::{self, WeightProvenance, WeightSet};
use crate::moments::{self, ClipConfig};
use crate::patterns::{LabelledGroup, MissingDataset, ObservationPattern};

/// Gaussian data-generating design: covariates `X ~ N(0, Sigma)` and
/// response `Y = X^T beta + sigma * eps` with independent standard normal
/// noise.
#[derive(Debug, Clone)]
pub struct GaussianDesign {
    sigma: DMatrix<f64>,
    chol: DMatrix<f64>,
    beta: DVector<f64>,
    noise_sd: f64,
}

impl GaussianDesign {
    pub fn new(sigma: DMatrix<f64>, beta: DVector<f64>, noise_sd: f64) -> Result<Self> {
        let p = sigma.nrows();
        if sigma.ncols() != p || beta.len() != p {
            return Err(Error::invalid("design dimensions disagree"));
        }
        if !noise_sd.is_finite() || noise_sd < 0.0 {
            return Err(Error::invalid("noise sd must be finite and nonnegative"));
        }
        if sigma.iter().any(|v| !v.is_finite()) || beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("design contains non-finite values"));
        }
        let (eig_min, _) = linalg::eigen_range(&sigma);
        if eig_min <= 0.0 {
            return Err(Error::invalid("design covariance is not positive-definite"));
        }
        let chol = Cholesky::new(sigma.clone())
            .ok_or_else(|| Error::invalid("design covariance is not positive-definite"))?
            .l();
        Ok(Self {
            sigma,
            chol,
            beta,
            noise_sd,
        })
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    /// Clip bounds matching the true spectrum, as would be assumed known.
    pub fn clip_config(&self) -> ClipConfig {
        let (lo, hi) = linalg::eigen_range(&self.sigma);
        ClipConfig::new(lo, hi).expect("validated design spectrum")
    }

    fn draw_x(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.p(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.chol * z
    }

    fn draw_y(&self, x: &DVector<f64>, rng: &mut ChaCha8Rng) -> f64 {
        let eps: f64 = rng.sample(StandardNormal);
        x.dot(&self.beta) + self.noise_sd * eps
    }
}

/// Which missingness pattern to inject into the labelled data.
#[derive(Debug, Clone)]
pub enum MissingnessVariant {
    /// `n1` complete rows plus `n2` rows missing the final `p0` covariates.
    Monotonic { p0: usize, n1: usize, n2: usize },
    /// `n` rows, each covariate observed independently with probability
    /// `obs_prob` (empty rows redrawn).
    McarIndependent { obs_prob: f64, n: usize },
    /// Explicit per-pattern row counts.
    Grouped(Vec<(ObservationPattern, usize)>),
}

/// Missingness specification: the labelled variant plus the size of the
/// fully observed unlabelled block.
#[derive(Debug, Clone)]
pub struct MissingnessSpec {
    pub variant: MissingnessVariant,
    pub unlabelled_n: usize,
}

/// AR-style Toeplitz covariance with entries `r^{|i-j|}`.
pub fn gen_ar_covariance(p: usize, r: f64) -> Result<DMatrix<f64>> {
    if !(r.abs() < 1.0) {
        return Err(Error::invalid("AR parameter must satisfy |r| < 1"));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| {
        r.powi((i as i32 - j as i32).abs())
    }))
}

/// Identity-block covariance with a seeded rank-one cross block
/// `scale * u v^T` between the first `split_a` variables and the rest.
/// Verified positive-definite, regenerating up to ten times.
pub fn gen_block_crossed_covariance(
    p: usize,
    split_a: usize,
    scale: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if split_a == 0 || split_a >= p {
        return Err(Error::invalid("split must leave both blocks non-empty"));
    }
    if !(scale.abs() < 1.0) {
        return Err(Error::invalid("cross-block scale must satisfy |scale| < 1"));
    }
    const RETRIES: usize = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RETRIES {
        let mut u = DVector::from_fn(split_a, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut v = DVector::from_fn(p - split_a, |_, _| rng.sample::<f64, _>(StandardNormal));
        if u.norm() == 0.0 || v.norm() == 0.0 {
            continue;
        }
        u /= u.norm();
        v /= v.norm();
        let mut sigma = DMatrix::identity(p, p);
        for i in 0..split_a {
            for j in 0..p - split_a {
                let val = scale * u[i] * v[j];
                sigma[(i, split_a + j)] = val;
                sigma[(split_a + j, i)] = val;
            }
        }
        let (eig_min, _) = linalg::eigen_range(&sigma);
        if eig_min > 0.0 {
            return Ok(sigma);
        }
    }
    Err(Error::PDFailure(RETRIES))
}

/// Samples one dataset from a design and missingness specification. The MCAR
/// masks are independent of the covariate values; unlabelled rows are always
/// fully observed.
pub fn sample_dataset(
    design: &GaussianDesign,
    spec: &MissingnessSpec,
    seed: u64,
) -> Result<MissingDataset> {
    let p = design.p();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<LabelledGroup> = Vec::new();

    match &spec.variant {
        MissingnessVariant::Monotonic { p0, n1, n2 } => {
            if *p0 == 0 || *p0 >= p {
                return Err(Error::invalid("p0 must lie in 1..p"));
            }
            if let Some(g) = draw_group(design, ObservationPattern::full(p), *n1, &mut rng)? {
                groups.push(g);
            }
            let partial = ObservationPattern::new((0..p - p0).collect(), p)?;
            if let Some(g) = draw_group(design, partial, *n2, &mut rng)? {
                groups.push(g);
            }
        }
        MissingnessVariant::McarIndependent { obs_prob, n } => {
            if !(*obs_prob > 0.0 && *obs_prob < 1.0) {
                return Err(Error::invalid("observation probability must lie in (0, 1)"));
            }
            // Rows whose mask comes up empty are redrawn, conditioning on at
            // least one observed covariate.
            let mut by_pattern: BTreeMap<Vec<usize>, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
            for _ in 0..*n {
                let full = design.draw_x(&mut rng);
                let y = design.draw_y(&full, &mut rng);
                let observed = loop {
                    let mask: Vec<usize> =
                        (0..p).filter(|_| rng.random::<f64>() < *obs_prob).collect();
                    if !mask.is_empty() {
                        break mask;
                    }
                };
                let entry = by_pattern.entry(observed.clone()).or_default();
                for &j in &observed {
                    entry.0.push(full[j]);
                }
                entry.1.push(y);
            }
            for (observed, (values, ys)) in by_pattern {
                let width = observed.len();
                let pattern = ObservationPattern::new(observed, p)?;
                let x = DMatrix::from_row_slice(ys.len(), width, &values);
                groups.push(LabelledGroup::new(pattern, x, DVector::from_vec(ys))?);
            }
        }
        MissingnessVariant::Grouped(patterns) => {
            for (pattern, n) in patterns {
                if let Some(g) = draw_group(design, pattern.clone(), *n, &mut rng)? {
                    groups.push(g);
                }
            }
        }
    }

    let n_u = spec.unlabelled_n;
    let mut unlabelled = DMatrix::zeros(n_u, p);
    for r in 0..n_u {
        let full = design.draw_x(&mut rng);
        for j in 0..p {
            unlabelled[(r, j)] = full[j];
        }
    }

    MissingDataset::new(groups, unlabelled, p)
}

fn draw_group(
    design: &GaussianDesign,
    pattern: ObservationPattern,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<LabelledGroup>> {
    if n == 0 {
        return Ok(None);
    }
    let width = pattern.len();
    let mut x = DMatrix::zeros(n, width);
    let mut y = DVector::zeros(n);
    for r in 0..n {
        let full = design.draw_x(rng);
        y[r] = design.draw_y(&full, rng);
        for (c, &j) in pattern.observed().iter().enumerate() {
            x[(r, c)] = full[j];
        }
    }
    Ok(Some(LabelledGroup::new(pattern, x, y)?))
}

/// Samples a dataset, resampling the whole replication (with a derived seed)
/// when the MCAR draw leaves some variable unobserved in the labelled data.
/// Returns the dataset and the number of resamples taken.
pub fn sample_dataset_valid(
    design: &GaussianDesign,
    spec: &MissingnessSpec,
    seed: u64,
    max_retries: usize,
) -> Result<(MissingDataset, usize)> {
    let mut attempt = 0usize;
    loop {
        let attempt_seed = if attempt == 0 {
            seed
        } else {
            sub_seed(seed, 0xFEED_0000 + attempt as u64)
        };
        match sample_dataset(design, spec, attempt_seed) {
            Ok(ds) => return Ok((ds, attempt)),
            Err(Error::VariableNeverObserved(_)) if attempt < max_retries => {
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Deterministic sub-stream derivation (splitmix64 step).
pub fn sub_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Complete-case least squares baseline: OLS on the fully observed labelled
/// rows only.
pub fn fit_cc_ols(dataset: &MissingDataset) -> Result<DVector<f64>> {
    let (beta, _) = lowdim::complete_case_ols(dataset)?;
    Ok(beta)
}

/// Single-imputation baseline: the weighted-imputation estimator with unit
/// weights.
pub fn fit_si(dataset: &MissingDataset, sigma_pd: &DMatrix<f64>) -> Result<lowdim::LowDimFit> {
    lowdim::fit_unit(dataset, sigma_pd)
}

/// Mean-imputation baseline: missing cells replaced by the column mean of
/// the observed labelled entries, then ordinary least squares.
pub fn fit_mean_impute(dataset: &MissingDataset) -> Result<DVector<f64>> {
    let p = dataset.p();
    let mut sums = vec![0.0; p];
    let mut counts = vec![0usize; p];
    for g in dataset.groups() {
        for (c, &j) in g.pattern().observed().iter().enumerate() {
            for r in 0..g.n() {
                sums[j] += g.x()[(r, c)];
            }
            counts[j] += g.n();
        }
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();

    let n = dataset.n_labelled();
    let mut x = DMatrix::from_fn(n, p, |_, j| means[j]);
    let mut y = DVector::zeros(n);
    let mut row = 0usize;
    for g in dataset.groups() {
        for r in 0..g.n() {
            for (c, &j) in g.pattern().observed().iter().enumerate() {
                x[(row, j)] = g.x()[(r, c)];
            }
            y[row] = g.y()[r];
            row += 1;
        }
    }
    linalg::ols(&x, &y, || Error::SingularDesign(0))
}

/// Residual-variance plug-in for pilot-based weights: the mean squared
/// residual on the complete cases when enough exist, else pooled over all
/// labelled rows with imputed predictions (an overestimate, which only
/// flattens the weights).
pub fn pilot_sigma2(
    dataset: &MissingDataset,
    sigma_pd: &DMatrix<f64>,
    beta: &DVector<f64>,
) -> Result<f64> {
    let p = dataset.p();
    if let Some(g) = dataset.complete_group() {
        if g.n() > p {
            let resid = g.y() - g.x() * beta;
            return Ok(resid.norm_squared() / (g.n() - p) as f64);
        }
    }
    let projections = lowdim::ProjectionSet::compute(sigma_pd, dataset)?;
    let mut rss = 0.0;
    for (k, g) in dataset.groups().iter().enumerate() {
        let coeff = projections.get(k) * beta;
        let resid = g.y() - g.x() * coeff;
        rss += resid.norm_squared();
    }
    Ok(rss / dataset.n_labelled() as f64)
}

/// OSS fit used throughout the harness: weights from a pilot coefficient
/// estimate plugged into the oracle-weight formula.
fn fit_oss_with_pilot(
    dataset: &MissingDataset,
    sigma_pd: &DMatrix<f64>,
    pilot_beta: &DVector<f64>,
    pilot_sigma2: f64,
) -> Result<lowdim::LowDimFit> {
    let weights = lowdim::weights_from_pilot(dataset, sigma_pd, pilot_beta, pilot_sigma2)?;
    lowdim::fit_weighted_imputation(dataset, sigma_pd, &weights)
}

/// Two-fold cross-fit with pilot-based weights: per fold, the covariance
/// comes from the other fold and the weights from a unit-weight pilot fit on
/// the fold itself. Used for designs whose patterns are too small for
/// per-pattern regression.
pub fn fit_crossfit_plugin(
    dataset: &MissingDataset,
    clip: &ClipConfig,
    seed: u64,
) -> Result<lowdim::LowDimFit> {
    use rand::seq::SliceRandom;
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

    let fit_fold = |selector: &dyn Fn(usize, usize) -> bool| -> Result<lowdim::LowDimFit> {
        let own = dataset.filter_rows(selector)?;
        let other = dataset.filter_rows(|g, r| !selector(g, r))?;
        let estimates = moments::MomentEstimates::estimate(&other)?;
        let (sigma_pd, _) = moments::clip_covariance(&estimates.sigma_hat, clip);
        let pilot = lowdim::fit_unit(&own, &sigma_pd)?;
        let s2 = pilot_sigma2(&own, &sigma_pd, &pilot.beta)?;
        fit_oss_with_pilot(&own, &sigma_pd, &pilot.beta, s2)
    };

    let fit1 = fit_fold(&|g, r| fold_one[g][r])?;
    let fit2 = fit_fold(&|g, r| !fold_one[g][r])?;
    let beta = (&fit1.beta + &fit2.beta) * 0.5;
    let weights = WeightSet::unit(dataset.num_patterns());
    let alpha_hat = lowdim::effective_sample_sizes(dataset, &weights);
    Ok(lowdim::LowDimFit {
        beta,
        weights,
        alpha_hat,
        cov_source: lowdim::CovSource::SupervisedPairwise,
        thresholded: false,
    })
}

/// Configuration for a named experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub name: String,
    pub reps: Option<usize>,
    pub seed: u64,
    pub overrides: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn new(name: impl Into<String>, seed: u64) -> Self {
        Self {
            name: name.into(),
            reps: None,
            seed,
            overrides: BTreeMap::new(),
        }
    }

    pub fn with_reps(mut self, reps: usize) -> Self {
        self.reps = Some(reps);
        self
    }

    pub fn set(mut self, key: &str, value: impl ToString) -> Self {
        self.overrides.insert(key.to_string(), value.to_string());
        self
    }
}

/// Per-replication squared errors for every method and x-grid point.
#[derive(Debug, Clone)]
pub struct DetailedExperiment {
    pub experiment: String,
    pub methods: Vec<String>,
    pub xs: Vec<f64>,
    /// Indexed `[x][method][rep]`.
    pub mse: Vec<Vec<Vec<f64>>>,
    pub seed: u64,
    pub reps: usize,
    pub resampled: usize,
}

/// One aggregated output row. `rel_eff` is the per-replication ratio of the
/// complete-case squared error to this method's squared error, averaged over
/// replications (the table convention; the CC row is exactly 1).
#[derive(Debug, Clone)]
pub struct ExperimentRow {
    pub experiment: String,
    pub method: String,
    pub x: f64,
    pub mse: f64,
    pub se: f64,
    pub mse_median: f64,
    pub reps: usize,
    pub rel_eff: Option<f64>,
    pub rel_eff_se: Option<f64>,
}

/// Aggregated experiment output.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<ExperimentRow>,
    pub seed: u64,
    pub reps: usize,
    pub resampled: usize,
}

impl DetailedExperiment {
    /// Aggregates per-replication errors into means, standard errors and
    /// medians, with relative efficiency against the `CC` method when it is
    /// present. Relative efficiency averages the paired per-replication
    /// ratios, matching how the reference tables report it.
    pub fn summarize(&self) -> ExperimentResult {
        let cc_idx = self.methods.iter().position(|m| m == "CC");
        let mut rows = Vec::new();
        for (xi, &x) in self.xs.iter().enumerate() {
            for (mi, method) in self.methods.iter().enumerate() {
                let values = &self.mse[xi][mi];
                let m = mean(values);
                let ratios: Option<Vec<f64>> = cc_idx.map(|ci| {
                    self.mse[xi][ci]
                        .iter()
                        .zip(values)
                        .map(|(cc, v)| cc / v)
                        .collect()
                });
                rows.push(ExperimentRow {
                    experiment: self.experiment.clone(),
                    method: method.clone(),
                    x,
                    mse: m,
                    se: standard_error(values),
                    mse_median: median(values),
                    reps: values.len(),
                    rel_eff: ratios.as_ref().map(|r| mean(r)),
                    rel_eff_se: ratios.as_ref().map(|r| standard_error(r)),
                });
            }
        }
        ExperimentResult {
            rows,
            seed: self.seed,
            reps: self.reps,
            resampled: self.resampled,
        }
    }
}

impl ExperimentResult {
    /// Writes the aggregate table as CSV. Floats are formatted with Rust's
    /// shortest round-trip representation, so identical runs produce
    /// identical bytes.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "experiment",
            "method",
            "x",
            "mse",
            "se",
            "mse_median",
            "reps",
            "rel_eff",
            "rel_eff_se",
        ])?;
        for row in &self.rows {
            w.write_record([
                row.experiment.as_str(),
                row.method.as_str(),
                &row.x.to_string(),
                &row.mse.to_string(),
                &row.se.to_string(),
                &row.mse_median.to_string(),
                &row.reps.to_string(),
                &row.rel_eff.map(|v| v.to_string()).unwrap_or_default(),
                &row.rel_eff_se.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn standard_error(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Runs a named experiment and aggregates the results.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    Ok(run_experiment_detailed(config)?.summarize())
}

/// Runs a named experiment, returning per-replication errors.
pub fn run_experiment_detailed(config: &ExperimentConfig) -> Result<DetailedExperiment> {
    match config.name.as_str() {
        "fig1" => fig1_like(config, false),
        "fig2" => fig1_like(config, true),
        "fig3" => fig3(config),
        "table2" => table_experiment(config, 1.0),
        "table3" => table_experiment(config, 3.0),
        "fig6a" => fig6a(config),
        "fig6b" => fig6b(config),
        "fig7" => fig7(config),
        "fig8" => fig8(config),
        other => Err(Error::UnknownExperiment(other.to_string())),
    }
}

struct Overrides<'a>(&'a BTreeMap<String, String>);

impl<'a> Overrides<'a> {
    fn new(map: &'a BTreeMap<String, String>, allowed: Vec<&'static str>) -> Result<Self> {
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Parse(format!(
                    "unknown override {key:?}; allowed: {}",
                    allowed.join(", ")
                )));
            }
        }
        Ok(Self(map))
    }

    fn f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Parse(format!("override {key}={v} is not a number"))),
        }
    }

    fn usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Parse(format!("override {key}={v} is not an integer"))),
        }
    }

    fn usize_list(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.0.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse()
                        .map_err(|_| Error::Parse(format!("override {key}={v} is not an integer list")))
                })
                .collect(),
        }
    }
}

/// Shared engine: runs `runner(x_idx, dataset_seed)` for every grid point and
/// replication in parallel and assembles errors in a fixed order.
fn execute<F>(
    experiment: &str,
    methods: Vec<String>,
    xs: Vec<f64>,
    reps: usize,
    seed: u64,
    runner: F,
) -> Result<DetailedExperiment>
where
    F: Fn(usize, u64) -> Result<(Vec<f64>, usize)> + Sync,
{
    let jobs: Vec<(usize, usize)> = (0..xs.len())
        .flat_map(|xi| (0..reps).map(move |rep| (xi, rep)))
        .collect();
    let outcomes: Vec<(usize, usize, Vec<f64>, usize)> = jobs
        .par_iter()
        .map(|&(xi, rep)| {
            let dataset_seed = sub_seed(seed + rep as u64, xi as u64);
            let (errors, retries) = runner(xi, dataset_seed)?;
            Ok::<_, Error>((xi, rep, errors, retries))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut mse = vec![vec![vec![0.0; reps]; methods.len()]; xs.len()];
    let mut resampled = 0usize;
    for (xi, rep, errors, retries) in outcomes {
        if errors.len() != methods.len() {
            return Err(Error::invalid("runner returned a mismatched method count"));
        }
        for (mi, err) in errors.into_iter().enumerate() {
            mse[xi][mi][rep] = err;
        }
        resampled += retries;
    }

    Ok(DetailedExperiment {
        experiment: experiment.to_string(),
        methods,
        xs,
        mse,
        seed,
        reps,
        resampled,
    })
}

fn sq_error(beta_hat: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    (beta_hat - beta).norm_squared()
}

/// Oracle weights scaled by `c` on the incomplete patterns.
fn scaled_oracle_weights(
    design: &GaussianDesign,
    dataset: &MissingDataset,
    c: f64,
) -> Result<WeightSet> {
    let patterns: Vec<&ObservationPattern> = dataset.groups().iter().map(|g| g.pattern()).collect();
    let oracle = lowdim::oracle_weights(design.noise_sd(), design.beta(), design.sigma(), &patterns)?;
    let weights: Vec<f64> = oracle
        .weights()
        .iter()
        .zip(dataset.groups())
        .map(|(&w, g)| if g.pattern().is_full() { w } else { c * w })
        .collect();
    WeightSet::new(weights, None, WeightProvenance::Oracle)
}

/// ISS designs of the simple monotonic pattern: complete cases, single
/// imputation (`fig1`) or misscaled oracle weights (`fig2`), all with the
/// covariance known exactly.
fn fig1_like(config: &ExperimentConfig, weight_sweep: bool) -> Result<DetailedExperiment> {
    let ov = Overrides::new(
        &config.overrides,
        vec!["sigma", "n1", "p0", "n2_grid", "c_grid"],
    )?;
    let sigma_noise = ov.f64("sigma", 1.0)?;
    let n1 = ov.usize("n1", 100)?;
    let p0 = ov.usize("p0", 1)?;
    let n2_grid = ov.usize_list("n2_grid", &[100, 1_000, 10_000, 100_000])?;
    let p = 10usize;
    let mut beta = DVector::from_element(p, 1.0);
    beta[p - 1] = 5.0;
    let design = GaussianDesign::new(gen_ar_covariance(p, 0.6)?, beta, sigma_noise)?;

    let reps = config.reps.unwrap_or(100);
    let (methods, cs): (Vec<String>, Vec<f64>) = if weight_sweep {
        let c_grid = config
            .overrides
            .get("c_grid")
            .map(|v| {
                v.split(',')
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<f64>, _>>()
                    .map_err(|_| Error::Parse("c_grid must be a list of numbers".into()))
            })
            .transpose()?
            .unwrap_or_else(|| vec![0.1, 0.5, 2.0, 10.0]);
        let mut methods = vec!["CC".to_string(), "ISS".to_string()];
        methods.extend(c_grid.iter().map(|c| format!("ISS_c{c}")));
        (methods, c_grid)
    } else {
        (vec!["CC".into(), "SI".into(), "ISS".into()], Vec::new())
    };

    let xs: Vec<f64> = n2_grid.iter().map(|&n| n as f64).collect();
    let design_ref = &design;
    let cs_ref = &cs;
    execute(
        &config.name,
        methods,
        xs,
        reps,
        config.seed,
        move |xi, dataset_seed| {
            let spec = MissingnessSpec {
                variant: MissingnessVariant::Monotonic {
                    p0,
                    n1,
                    n2: n2_grid[xi],
                },
                unlabelled_n: 0,
            };
            let (ds, retries) = sample_dataset_valid(design_ref, &spec, dataset_seed, 100)?;
            let truth = design_ref.beta();
            let mut errors = Vec::new();
            errors.push(sq_error(&fit_cc_ols(&ds)?, truth));
            if weight_sweep {
                let oracle = scaled_oracle_weights(design_ref, &ds, 1.0)?;
                let fit = lowdim::fit_weighted_imputation(&ds, design_ref.sigma(), &oracle)?;
                errors.push(sq_error(&fit.beta, truth));
                for &c in cs_ref {
                    let w = scaled_oracle_weights(design_ref, &ds, c)?;
                    let fit = lowdim::fit_weighted_imputation(&ds, design_ref.sigma(), &w)?;
                    errors.push(sq_error(&fit.beta, truth));
                }
            } else {
                let si = fit_si(&ds, design_ref.sigma())?;
                errors.push(sq_error(&si.beta, truth));
                let oracle = scaled_oracle_weights(design_ref, &ds, 1.0)?;
                let fit = lowdim::fit_weighted_imputation(&ds, design_ref.sigma(), &oracle)?;
                errors.push(sq_error(&fit.beta, truth));
            }
            Ok((errors, retries))
        },
    )
}

/// The OSS case on the simple monotonic pattern: the covariance is estimated
/// from unlabelled blocks of growing size and clipped; weights stay oracle.
fn fig3(config: &ExperimentConfig) -> Result<DetailedExperiment> {
    let ov = Overrides::new(&config.overrides, vec!["sigma", "n1", "p0", "n2", "n_grid"])?;
    let sigma_noise = ov.f64("sigma", 2.0)?;
    let n1 = ov.usize("n1", 100)?;
    let p0 = ov.usize("p0", 1)?;
    let n2 = ov.usize("n2", 10_000)?;
    let n_grid = ov.usize_list("n_grid", &[50, 500, 5_000])?;
    let p = 10usize;
    let mut beta = DVector::from_element(p, 1.0);
    beta[p - 1] = 5.0;
    let design = GaussianDesign::new(gen_ar_covariance(p, 0.6)?, beta, sigma_noise)?;
    let clip = design.clip_config();
    let reps = config.reps.unwrap_or(100);

    let methods = vec!["CC".to_string(), "ISS".to_string(), "OSS".to_string()];
    let xs: Vec<f64> = n_grid.iter().map(|&n| n as f64).collect();
    let design_ref = &design;
    execute(
        &config.name,
        methods,
        xs,
        reps,
        config.seed,
        move |xi, dataset_seed| {
            let spec = MissingnessSpec {
                variant: MissingnessVariant::Monotonic { p0, n1, n2 },
                unlabelled_n: n_grid[xi],
            };
            let (ds, retries) = sample_dataset_valid(design_ref, &spec, dataset_seed, 100)?;
            let truth = design_ref.beta();
            let oracle = scaled_oracle_weights(design_ref, &ds, 1.0)?;

            let cc = sq_error(&fit_cc_ols(&ds)?, truth);
            let iss_fit = lowdim::fit_weighted_imputation(&ds, design_ref.sigma(), &oracle)?;
            let sigma_u = moments::second_moment(ds.unlabelled())?;
            let (sigma_clipped, _) = moments::clip_covariance(&sigma_u, &clip);
            let oss_fit = lowdim::fit_weighted_imputation(&ds, &sigma_clipped, &oracle)?;
            Ok((
                vec![
                    cc,
                    sq_error(&iss_fit.beta, truth),
                    sq_error(&oss_fit.beta, truth),
                ],
                retries,
            ))
        },
    )
}

/// Tables: simple monotonic pattern with a large unlabelled block. The OSS
/// estimator takes its covariance from the unlabelled data and its weights
/// from the complete-case estimator.
fn table_experiment(config: &ExperimentConfig, default_sigma: f64) -> Result<DetailedExperiment> {
    let ov = Overrides::new(&config.overrides, vec!["sigma", "n1", "N", "n2_grid"])?;
    let sigma_noise = ov.f64("sigma", default_sigma)?;
    let n1 = ov.usize("n1", 500)?;
    let big_n = ov.usize("N", 10_000)?;
    let n2_grid = ov.usize_list("n2_grid", &[500, 1_000, 2_000, 5_000, 50_000])?;
    let p = 10usize;
    let design = GaussianDesign::new(
        gen_ar_covariance(p, 0.6)?,
        DVector::from_element(p, 1.0),
        sigma_noise,
    )?;
    let clip = design.clip_config();
    let reps = config.reps.unwrap_or(200);

    let methods = vec!["CC".to_string(), "OSS".to_string()];
    let xs: Vec<f64> = n2_grid.iter().map(|&n| n as f64).collect();
    let design_ref = &design;
    execute(
        &config.name,
        methods,
        xs,
        reps,
        config.seed,
        move |xi, dataset_seed| {
            let spec = MissingnessSpec {
                variant: MissingnessVariant::Monotonic {
                    p0: 1,
                    n1,
                    n2: n2_grid[xi],
                },
                unlabelled_n: big_n,
            };
            let (ds, retries) = sample_dataset_valid(design_ref, &spec, dataset_seed, 100)?;
            let truth = design_ref.beta();

            let (beta_cc, sigma2_cc) = lowdim::complete_case_ols(&ds)?;
            let cc = sq_error(&beta_cc, truth);

            let sigma_u = moments::second_moment(ds.unlabelled())?;
            let (sigma_clipped, _) = moments::clip_covariance(&sigma_u, &clip);
            let oss = fit_oss_with_pilot(&ds, &sigma_clipped, &beta_cc, sigma2_cc)?;
            Ok((vec![cc, sq_error(&oss.beta, truth)], retries))
        },
    )
}

/// Supervised unstructured comparison: MCAR masks, pairwise covariance from
/// the labelled data, pilot-based weights, cross-fitting, mean imputation and
/// the thresholded estimator.
fn fig6a(config: &ExperimentConfig) -> Result<DetailedExperiment> {
    let ov = Overrides::new(&config.overrides, vec!["sigma", "n", "obs_prob"])?;
    let sigma_noise = ov.f64("sigma", 1.0)?;
    let n = ov.usize("n", 1_000)?;
    let obs_prob = ov.f64("obs_prob", 0.8)?;
    let p = 10usize;
    let design = GaussianDesign::new(
        gen_ar_covariance(p, 0.6)?,
        DVector::from_element(p, 1.0),
        sigma_noise,
    )?;
    let clip = design.clip_config();
    let reps = config.reps.unwrap_or(100);

    let methods = vec![
        "CC".to_string(),
        "OSS".to_string(),
        "OSS_CF".to_string(),
        "Mean".to_string(),
        "Threshold".to_string(),
    ];
    let design_ref = &design;
    execute(
        &config.name,
        methods,
        vec![n as f64],
        reps,
        config.seed,
        move |_xi, dataset_seed| {
            let spec = MissingnessSpec {
                variant: MissingnessVariant::McarIndependent { obs_prob, n },
                unlabelled_n: 0,
            };
            let (ds, retries) = sample_dataset_valid(design_ref, &spec, dataset_seed, 100)?;
            let truth = design_ref.beta();

            let cc = sq_error(&fit_cc_ols(&ds)?, truth);

            let estimates = moments::MomentEstimates::estimate(&ds)?;
            let (sigma_pd, _) = moments::clip_covariance(&estimates.sigma_hat, &clip);
            let pilot = lowdim::fit_unit(&ds, &sigma_pd)?;
            let s2 = pilot_sigma2(&ds, &sigma_pd, &pilot.beta)?;
            let oss = fit_oss_with_pilot(&ds, &sigma_pd, &pilot.beta, s2)?;

            let cf = fit_crossfit_plugin(&ds, &clip, sub_seed(dataset_seed, 0xCF))?;
            let mean_fit = fit_mean_impute(&ds)?;

            let (rho, c_rho) = lowdim::default_rho_c_rho(&estimates.counts, ds.n_labelled());
            let threshold = lowdim::fit_thresholded_unstructured(&ds, &sigma_pd, rho, c_rho, &clip)?;

            Ok((
                vec![
                    cc,
                    sq_error(&oss.beta, truth),
                    sq_error(&cf.beta, truth),
                    sq_error(&mean_fit, truth),
                    sq_error(&threshold.beta, truth),
                ],
                retries,
            ))
        },
    )
}

/// Supervised structured comparison: three blockwise patterns with very few
/// complete cases.
fn fig6b(config: &ExperimentConfig) -> Result<DetailedExperiment> {
    let ov = Overrides::new(&config.overrides, vec!["sigma", "n1", "n2", "n3"])?;
    let sigma_noise = ov.f64("sigma", 1.0)?;
    let n1 = ov.usize("n1", 50)?;
    let n2 = ov.usize("n2", 500)?;
    let n3 = ov.usize("n3", 4_500)?;
    let p = 10usize;
    let design = GaussianDesign::new(
        gen_ar_covariance(p, 0.6)?,
        DVector::from_element(p, 1.0),
        sigma_noise,
    )?;
    let clip = design.clip_config();
    let reps = config.reps.unwrap_or(100);

    let methods = vec![
        "CC".to_string(),
        "OSS".to_string(),
        "OSS_CF".to_string(),
        "Mean".to_string(),
    ];
    let design_ref = &design;
    execute(
        &config.name,
        methods,
        vec![(n1 + n2 + n3) as f64],
        reps,
        config.seed,
        move |_xi, dataset_seed| {
            let missing_last = ObservationPattern::new((0..p - 1).collect(), p)?;
            let missing_penultimate =
                ObservationPattern::new((0..p).filter(|&j| j != p - 2).collect(), p)?;
            let spec = MissingnessSpec {
                variant: MissingnessVariant::Grouped(vec![
                    (ObservationPattern::full(p), n1),
                    (missing_last, n2),
                    (missing_penultimate, n3),
                ]),
                unlabelled_n: 0,
            };
            let (ds, retries) = sample_dataset_valid(design_ref, &spec, dataset_seed, 100)?;
            let truth = design_ref.beta();

            let cc = sq_error(&fit_cc_ols(&ds)?, truth);
            let estimates = moments::MomentEstimates::estimate(&ds)?;
            let (sigma_pd, _) = moments::clip_covariance(&estimates.sigma_hat, &clip);
            let pilot = lowdim::fit_unit(&ds, &sigma_pd)?;
            let s2 = pilot_sigma2(&ds, &sigma_pd, &pilot.beta)?;
            let oss = fit_oss_with_pilot(&ds, &sigma_pd, &pilot.beta, s2)?;
            let cf = fit_crossfit_plugin(&ds, &clip, sub_seed(dataset_seed, 0xCF))?;
            let mean_fit = fit_mean_impute(&ds)?;

            Ok((
                vec![
                    cc,
                    sq_error(&oss.beta, truth),
                    sq_error(&cf.beta, truth),
                    sq_error(&mean_fit, truth),
                ],
                retries,
            ))
        },
    )
}

/// High-dimensional three-cycle design: three modalities, no complete cases,
/// cross-validated selector with varying unlabelled sizes.
fn fig7(config: &ExperimentConfig) -> Result<DetailedExperiment> {
    let ov = Overrides::new(
        &config.overrides,
        vec!["sigma", "n_grid", "grid_size", "folds"],
    )?;
    let sigma_noise = ov.f64("sigma", 3.0)?;
    let n_grid = ov.usize_list("n_grid", &[0, 200, 1_000])?;
    let grid_size = ov.usize("grid_size", 30)?;
    let folds = ov.usize("folds", 5)?;
    let p = 100usize;
    let mut beta = DVector::zeros(p);
    for b in 0..3 {
        for j in 0..5 {
            beta[b * 45 + j] = 1.0;
        }
    }
    // Patterns: missing the first 45, missing the middle 45, missing the
    // final 10 variables.
    let pat1 = ObservationPattern::new((45..p).collect(), p)?;
    let pat2 = ObservationPattern::new((0..45).chain(90..p).collect(), p)?;
    let pat3 = ObservationPattern::new((0..90).collect(), p)?;
    let reps = config.reps.unwrap_or(100);

    let methods = vec!["Dantzig".to_string()];
    let xs: Vec<f64> = n_grid.iter().map(|&n| n as f64).collect();
    let beta_ref = &beta;
    let pats = (pat1, pat2, pat3);
    let pats_ref = &pats;
    execute(
        &config.name,
        methods,
        xs,
        reps,
        config.seed,
        move |xi, dataset_seed| {
            let sigma = gen_block_crossed_covariance(p, 90, 0.3, sub_seed(dataset_seed, 0x5167))?;
            let design = GaussianDesign::new(sigma, beta_ref.clone(), sigma_noise)?;
            let spec = MissingnessSpec {
                variant: MissingnessVariant::Grouped(vec![
                    (pats_ref.0.clone(), 50),
                    (pats_ref.1.clone(), 50),
                    (pats_ref.2.clone(), 1_000),
                ]),
                unlabelled_n: n_grid[xi],
            };
            let (ds, retries) = sample_dataset_valid(&design, &spec, dataset_seed, 100)?;
            let err = dantzig_cv_error(&ds, beta_ref, grid_size, folds, dataset_seed)?;
            Ok((vec![err], retries))
        },
    )
}

/// High-dimensional unstructured design: sparse signal, heavy MCAR masking,
/// cross-validated selector with varying unlabelled sizes.
fn fig8(config: &ExperimentConfig) -> Result<DetailedExperiment> {
    let ov = Overrides::new(
        &config.overrides,
        vec!["sigma", "n", "obs_prob", "n_grid", "grid_size", "folds"],
    )?;
    let sigma_noise = ov.f64("sigma", 3.0)?;
    let n = ov.usize("n", 1_000)?;
    let obs_prob = ov.f64("obs_prob", 0.2)?;
    let n_grid = ov.usize_list("n_grid", &[0, 200, 1_000])?;
    let grid_size = ov.usize("grid_size", 30)?;
    let folds = ov.usize("folds", 5)?;
    let p = 50usize;
    let mut beta = DVector::zeros(p);
    for j in 0..5 {
        beta[j] = 1.0;
        beta[p - 1 - j] = 1.0;
    }
    let reps = config.reps.unwrap_or(100);

    let methods = vec!["Dantzig".to_string()];
    let xs: Vec<f64> = n_grid.iter().map(|&n| n as f64).collect();
    let beta_ref = &beta;
    execute(
        &config.name,
        methods,
        xs,
        reps,
        config.seed,
        move |xi, dataset_seed| {
            let sigma = gen_block_crossed_covariance(p, 45, 0.3, sub_seed(dataset_seed, 0x5168))?;
            let design = GaussianDesign::new(sigma, beta_ref.clone(), sigma_noise)?;
            let spec = MissingnessSpec {
                variant: MissingnessVariant::McarIndependent { obs_prob, n },
                unlabelled_n: n_grid[xi],
            };
            let (ds, retries) = sample_dataset_valid(&design, &spec, dataset_seed, 100)?;
            let err = dantzig_cv_error(&ds, beta_ref, grid_size, folds, dataset_seed)?;
            Ok((vec![err], retries))
        },
    )
}

/// Cross-validated selector fit, returning the squared estimation error.
fn dantzig_cv_error(
    ds: &MissingDataset,
    truth: &DVector<f64>,
    grid_size: usize,
    folds: usize,
    seed: u64,
) -> Result<f64> {
    let estimates = moments::MomentEstimates::estimate(ds)?;
    let grid = dantzig::default_lambda_grid(&estimates.gamma_hat, grid_size)?;
    let (lambda, _) = dantzig::cross_validate_lambda(ds, &grid, folds, sub_seed(seed, 0xCF01))?;
    let fit = dantzig::fit_dantzig(ds, &dantzig::LambdaSpec::Fixed(lambda))?;
    Ok(sq_error(&fit.beta, truth))
}
