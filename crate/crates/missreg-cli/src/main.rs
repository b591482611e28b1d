//! Command-line driver: CSV ingestion, low- and high-dimensional fits,
//! simulation experiments and moment diagnostics.
//!
//! Exit codes: 0 on success, 2 on usage errors, 1 on data or solver errors
//! (printed with the library error name). File outputs are deterministic for
//! a fixed invocation and seed; timings go to the stdout metadata line only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};

use missreg::dantzig::{self, LambdaInputs, LambdaSpec};
use missreg::io::{self, CsvDataset};
use missreg::lowdim::{self, CovSource, LowDimFit, WeightSet};
use missreg::moments::{self, ClipConfig};
use missreg::patterns::MissingDataset;
use missreg::sim::{self, ExperimentConfig};
use missreg::Error;

#[derive(Parser)]
#[command(
    name = "missreg",
    about = "Linear regression with missing covariates and unlabelled data",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Weighted-imputation estimator for low-dimensional problems.
    FitLow(FitLowArgs),
    /// Modified Dantzig selector for high-dimensional sparse problems.
    FitHighdim(FitHighArgs),
    /// Run a named simulation experiment and write a results CSV.
    Simulate(SimulateArgs),
    /// Dump the moment estimates and the covariance spectrum to CSV.
    Moments(MomentsArgs),
    /// Export the grouped dataset back to CSV for debugging.
    ExportGroups(ExportArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WeightsArg {
    Unit,
    Oracle,
    Estimated,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CovArg {
    Unlabelled,
    Pairwise,
    File,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LambdaRuleArg {
    Unstructured,
    Structured,
}

#[derive(Args)]
struct CommonData {
    /// Input CSV; "NA" or an empty field marks a missing cell.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Name of the response column.
    #[arg(long)]
    response: Option<String>,
    /// Flat key=value config file; explicit flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Center covariate columns at their observed means first.
    #[arg(long)]
    center: bool,
}

const COMMON_KEYS: &[&str] = &["input", "response", "center"];

#[derive(Args)]
struct FitLowArgs {
    #[command(flatten)]
    data: CommonData,
    /// Weight choice (default: estimated).
    #[arg(long, value_enum)]
    weights: Option<WeightsArg>,
    /// Covariance source (default: pairwise).
    #[arg(long, value_enum)]
    cov: Option<CovArg>,
    /// Covariance CSV (row,col,value) when --cov file.
    #[arg(long)]
    cov_file: Option<PathBuf>,
    /// Two-fold cross-fitting (supervised case).
    #[arg(long)]
    crossfit: bool,
    /// Estimate weights by per-pattern regression instead of the pilot
    /// plug-in (requires large patterns).
    #[arg(long)]
    per_pattern_weights: bool,
    #[arg(long)]
    kappa_l: Option<f64>,
    #[arg(long)]
    kappa_u: Option<f64>,
    /// Spectrum lower bound for clipping (default 1e-3).
    #[arg(long)]
    lambda_minus: Option<f64>,
    /// Spectrum upper bound for clipping (default 1e3).
    #[arg(long)]
    lambda_plus: Option<f64>,
    /// Thresholded unit-weight estimator for balanced unstructured
    /// missingness.
    #[arg(long)]
    threshold: bool,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    c_rho: Option<f64>,
    /// True coefficients CSV (index,value), for --weights oracle.
    #[arg(long)]
    true_beta_file: Option<PathBuf>,
    /// True covariance CSV (row,col,value), for --weights oracle.
    #[arg(long)]
    true_cov_file: Option<PathBuf>,
    /// True noise standard deviation, for --weights oracle.
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV (kind,index,value); default fit_low.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

const FIT_LOW_KEYS: &[&str] = &[
    "input",
    "response",
    "center",
    "weights",
    "cov",
    "cov-file",
    "crossfit",
    "per-pattern-weights",
    "kappa-l",
    "kappa-u",
    "lambda-minus",
    "lambda-plus",
    "threshold",
    "rho",
    "c-rho",
    "true-beta-file",
    "true-cov-file",
    "noise-sd",
    "seed",
    "out",
];

#[derive(Args)]
struct FitHighArgs {
    #[command(flatten)]
    data: CommonData,
    /// Fixed regularisation parameter.
    #[arg(long)]
    lambda: Option<f64>,
    /// Theorem-driven regularisation rule.
    #[arg(long, value_enum)]
    lambda_rule: Option<LambdaRuleArg>,
    /// Five-fold cross-validation over a log-spaced grid.
    #[arg(long)]
    cv: bool,
    #[arg(long)]
    grid_min: Option<f64>,
    #[arg(long)]
    grid_max: Option<f64>,
    /// Grid resolution for --cv (default 30).
    #[arg(long)]
    grid_size: Option<usize>,
    /// Fold count for --cv (default 5).
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Leading constant A in the lambda rules (default 1).
    #[arg(long)]
    a_const: Option<f64>,
    /// Sub-Gaussian covariate scale; defaults to the largest diagonal
    /// second moment.
    #[arg(long)]
    r_x: Option<f64>,
    /// Noise level for the rules; defaults to a pilot plug-in.
    #[arg(long)]
    sigma: Option<f64>,
    /// ||beta*||_2 for the rules; defaults to a pilot plug-in.
    #[arg(long)]
    beta_norm: Option<f64>,
    /// Observation rate for the unstructured rule; defaults to
    /// min_g h_g / n_L.
    #[arg(long)]
    rho: Option<f64>,
    /// Output CSV of nonzero coefficients (index,value); default
    /// fit_highdim.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

const FIT_HIGH_KEYS: &[&str] = &[
    "input",
    "response",
    "center",
    "lambda",
    "lambda-rule",
    "cv",
    "grid-min",
    "grid-max",
    "grid-size",
    "folds",
    "seed",
    "a-const",
    "r-x",
    "sigma",
    "beta-norm",
    "rho",
    "out",
];

#[derive(Args)]
struct SimulateArgs {
    /// Experiment name: fig1, fig2, fig3, table2, table3, fig6a, fig6b,
    /// fig7, fig8.
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// Design parameter override, key=value (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Flat key=value config file; may set experiment, reps, seed and any
    /// design parameter.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct MomentsArgs {
    #[command(flatten)]
    data: CommonData,
    /// Output path prefix.
    #[arg(long, default_value = "moments_")]
    out_prefix: String,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    data: CommonData,
    #[arg(long, default_value = "groups.csv")]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::FitLow(args) => fit_low(args),
        Command::FitHighdim(args) => fit_highdim(args),
        Command::Simulate(args) => simulate(args),
        Command::Moments(args) => moments_cmd(args),
        Command::ExportGroups(args) => export_groups(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(err)) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

/// MISSREG_THREADS caps worker parallelism for simulations and LP grids.
fn init_threads() {
    if let Ok(raw) = std::env::var("MISSREG_THREADS") {
        if let Ok(n) = raw.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn read_config(path: &Path) -> Result<BTreeMap<String, String>, Failure> {
    let text = std::fs::read_to_string(path).map_err(Error::from)?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(Failure::Usage(format!(
                "{}:{}: expected key=value, got {trimmed:?}",
                path.display(),
                lineno + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Config-file values behind the flags: explicit flags win, config fills the
/// gaps, unknown keys are rejected.
struct ConfigMap {
    map: BTreeMap<String, String>,
}

impl ConfigMap {
    fn load(path: Option<&PathBuf>, allowed: &[&str]) -> Result<Self, Failure> {
        let map = match path {
            Some(p) => read_config(p)?,
            None => BTreeMap::new(),
        };
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Failure::Usage(format!(
                    "unknown config key {key:?}; allowed: {}",
                    allowed.join(", ")
                )));
            }
        }
        Ok(Self { map })
    }

    fn fill_string(&self, field: &mut Option<String>, key: &str) {
        if field.is_none() {
            if let Some(v) = self.map.get(key) {
                *field = Some(v.clone());
            }
        }
    }

    fn fill_path(&self, field: &mut Option<PathBuf>, key: &str) {
        if field.is_none() {
            if let Some(v) = self.map.get(key) {
                *field = Some(PathBuf::from(v));
            }
        }
    }

    fn fill_parse<T: std::str::FromStr>(
        &self,
        field: &mut Option<T>,
        key: &str,
    ) -> Result<(), Failure> {
        if field.is_none() {
            if let Some(v) = self.map.get(key) {
                let parsed = v
                    .parse()
                    .map_err(|_| Failure::Usage(format!("config {key}={v} cannot be parsed")))?;
                *field = Some(parsed);
            }
        }
        Ok(())
    }

    fn fill_enum<T: ValueEnum + Clone>(
        &self,
        field: &mut Option<T>,
        key: &str,
    ) -> Result<(), Failure> {
        if field.is_none() {
            if let Some(v) = self.map.get(key) {
                let parsed = T::from_str(v, true)
                    .map_err(|_| Failure::Usage(format!("config {key}={v} is not a valid value")))?;
                *field = Some(parsed);
            }
        }
        Ok(())
    }

    fn fill_bool(&self, field: &mut bool, key: &str) -> Result<(), Failure> {
        if !*field {
            if let Some(v) = self.map.get(key) {
                *field = match v.as_str() {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    other => {
                        return Err(Failure::Usage(format!(
                            "config {key}={other} is not a boolean"
                        )))
                    }
                };
            }
        }
        Ok(())
    }
}

/// Loads the input dataset after config resolution of `input`/`response`.
fn load_data(common: &mut CommonData, config: &ConfigMap) -> Result<CsvDataset, Failure> {
    config.fill_path(&mut common.input, "input");
    config.fill_string(&mut common.response, "response");
    config.fill_bool(&mut common.center, "center")?;
    let input = common
        .input
        .clone()
        .ok_or_else(|| Failure::Usage("--input is required".into()))?;
    let response = common
        .response
        .clone()
        .ok_or_else(|| Failure::Usage("--response is required".into()))?;
    let mut data = io::read_csv_file(&input, &response)?;
    if common.center {
        let (centered, _) = io::center_columns(&data.dataset)?;
        data.dataset = centered;
    }
    Ok(data)
}

fn write_file(path: &Path, body: impl FnOnce(&mut Vec<u8>) -> Result<(), Error>) -> Result<(), Error> {
    let mut buf = Vec::new();
    body(&mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// One-line JSON-style metadata record on stdout; timings live here so the
/// file outputs stay byte-identical across reruns.
fn print_metadata(fields: &[(&str, String)]) {
    let mut line = String::from("{");
    for (i, (key, value)) in fields.iter().enumerate() {
        if i > 0 {
            line.push_str(", ");
        }
        let _ = write!(line, "\"{key}\": {value}");
    }
    line.push('}');
    println!("{line}");
}

fn json_str(s: &str) -> String {
    format!("{s:?}")
}

fn fit_low(mut args: FitLowArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let config = ConfigMap::load(args.data.config.as_ref(), FIT_LOW_KEYS)?;
    config.fill_enum(&mut args.weights, "weights")?;
    config.fill_enum(&mut args.cov, "cov")?;
    config.fill_path(&mut args.cov_file, "cov-file");
    config.fill_bool(&mut args.crossfit, "crossfit")?;
    config.fill_bool(&mut args.per_pattern_weights, "per-pattern-weights")?;
    config.fill_parse(&mut args.kappa_l, "kappa-l")?;
    config.fill_parse(&mut args.kappa_u, "kappa-u")?;
    config.fill_parse(&mut args.lambda_minus, "lambda-minus")?;
    config.fill_parse(&mut args.lambda_plus, "lambda-plus")?;
    config.fill_bool(&mut args.threshold, "threshold")?;
    config.fill_parse(&mut args.rho, "rho")?;
    config.fill_parse(&mut args.c_rho, "c-rho")?;
    config.fill_path(&mut args.true_beta_file, "true-beta-file");
    config.fill_path(&mut args.true_cov_file, "true-cov-file");
    config.fill_parse(&mut args.noise_sd, "noise-sd")?;
    config.fill_parse(&mut args.seed, "seed")?;
    config.fill_path(&mut args.out, "out");

    let data = load_data(&mut args.data, &config)?;
    let ds = &data.dataset;
    let weights_arg = args.weights.unwrap_or(WeightsArg::Estimated);
    let cov_arg = args.cov.unwrap_or(CovArg::Pairwise);
    let clip = ClipConfig::new(
        args.lambda_minus.unwrap_or(1e-3),
        args.lambda_plus.unwrap_or(1e3),
    )?;
    let seed = args.seed.unwrap_or(0);
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("fit_low.csv"));

    let fit = if args.threshold {
        let sigma_pd = resolve_covariance(&args, cov_arg, ds, &clip)?;
        let partition = missreg::partition_modalities(ds);
        let counts = missreg::compute_counts(ds, &partition);
        let (rho_default, c_rho_default) = lowdim::default_rho_c_rho(&counts, ds.n_labelled());
        let rho = args.rho.unwrap_or(rho_default);
        let c_rho = args.c_rho.unwrap_or(c_rho_default);
        let mut fit = lowdim::fit_thresholded_unstructured(ds, &sigma_pd, rho, c_rho, &clip)?;
        fit.cov_source = match cov_arg {
            CovArg::Unlabelled => CovSource::OssUnlabelled,
            CovArg::Pairwise => CovSource::SupervisedPairwise,
            CovArg::File => CovSource::User,
        };
        fit
    } else if args.crossfit {
        if args.per_pattern_weights {
            let (kl, ku) = resolve_kappas(&args, ds)?;
            lowdim::fit_crossfit(ds, kl, ku, &clip, seed)?
        } else {
            sim::fit_crossfit_plugin(ds, &clip, seed)?
        }
    } else {
        let sigma_pd = resolve_covariance(&args, cov_arg, ds, &clip)?;
        let weights = resolve_weights(&args, weights_arg, ds, &sigma_pd)?;
        let mut fit = lowdim::fit_weighted_imputation(ds, &sigma_pd, &weights)?;
        fit.cov_source = match cov_arg {
            CovArg::Unlabelled => CovSource::OssUnlabelled,
            CovArg::Pairwise => CovSource::SupervisedPairwise,
            CovArg::File => CovSource::User,
        };
        fit
    };

    write_file(&out, |buf| write_lowdim_fit(buf, &fit))?;
    print_metadata(&[
        ("command", json_str("fit-low")),
        (
            "weights",
            json_str(match weights_arg {
                WeightsArg::Unit => "unit",
                WeightsArg::Oracle => "oracle",
                WeightsArg::Estimated => "estimated",
            }),
        ),
        (
            "cov",
            json_str(match cov_arg {
                CovArg::Unlabelled => "unlabelled",
                CovArg::Pairwise => "pairwise",
                CovArg::File => "file",
            }),
        ),
        ("crossfit", args.crossfit.to_string()),
        ("threshold", fit.thresholded.to_string()),
        ("seed", seed.to_string()),
        ("out", json_str(&out.display().to_string())),
        ("elapsed_ms", start.elapsed().as_millis().to_string()),
    ]);
    Ok(())
}

fn resolve_covariance(
    args: &FitLowArgs,
    cov_arg: CovArg,
    ds: &MissingDataset,
    clip: &ClipConfig,
) -> Result<DMatrix<f64>, Failure> {
    let raw = match cov_arg {
        CovArg::Unlabelled => {
            if ds.n_unlabelled() == 0 {
                return Err(Failure::Usage(
                    "--cov unlabelled needs unlabelled rows in the input".into(),
                ));
            }
            moments::second_moment(ds.unlabelled())?
        }
        CovArg::Pairwise => moments::MomentEstimates::estimate(ds)?.sigma_hat,
        CovArg::File => {
            let path = args
                .cov_file
                .as_ref()
                .ok_or_else(|| Failure::Usage("--cov file requires --cov-file".into()))?;
            let file = std::fs::File::open(path).map_err(Error::from)?;
            io::read_matrix_csv(std::io::BufReader::new(file), ds.p())?
        }
    };
    let (clipped, _) = moments::clip_covariance(&raw, clip);
    Ok(clipped)
}

fn resolve_weights(
    args: &FitLowArgs,
    weights_arg: WeightsArg,
    ds: &MissingDataset,
    sigma_pd: &DMatrix<f64>,
) -> Result<WeightSet, Failure> {
    match weights_arg {
        WeightsArg::Unit => Ok(WeightSet::unit(ds.num_patterns())),
        WeightsArg::Oracle => {
            let beta_path = args
                .true_beta_file
                .as_ref()
                .ok_or_else(|| Failure::Usage("--weights oracle requires --true-beta-file".into()))?;
            let cov_path = args
                .true_cov_file
                .as_ref()
                .ok_or_else(|| Failure::Usage("--weights oracle requires --true-cov-file".into()))?;
            let noise_sd = args
                .noise_sd
                .ok_or_else(|| Failure::Usage("--weights oracle requires --noise-sd".into()))?;
            let beta = read_vector_file(beta_path, ds.p())?;
            let file = std::fs::File::open(cov_path).map_err(Error::from)?;
            let sigma = io::read_matrix_csv(std::io::BufReader::new(file), ds.p())?;
            let patterns: Vec<_> = ds.groups().iter().map(|g| g.pattern()).collect();
            Ok(lowdim::oracle_weights(noise_sd, &beta, &sigma, &patterns)?)
        }
        WeightsArg::Estimated => {
            if args.per_pattern_weights {
                let (kl, ku) = resolve_kappas(args, ds)?;
                Ok(lowdim::estimate_weights(ds, kl, ku)?)
            } else {
                // Default fallback: unit-weight pilot fit plugged into the
                // oracle-weight formula.
                let pilot = lowdim::fit_unit(ds, sigma_pd)?;
                let s2 = sim::pilot_sigma2(ds, sigma_pd, &pilot.beta)?;
                Ok(lowdim::weights_from_pilot(ds, sigma_pd, &pilot.beta, s2)?)
            }
        }
    }
}

fn resolve_kappas(args: &FitLowArgs, ds: &MissingDataset) -> Result<(f64, f64), Failure> {
    match (args.kappa_l, args.kappa_u) {
        (Some(l), Some(u)) => Ok((l, u)),
        (None, None) => Ok(lowdim::default_kappas(ds)?),
        _ => Err(Failure::Usage(
            "--kappa-l and --kappa-u must be given together".into(),
        )),
    }
}

fn read_vector_file(path: &Path, p: usize) -> Result<DVector<f64>, Failure> {
    let file = std::fs::File::open(path).map_err(Error::from)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(std::io::BufReader::new(file));
    let mut v = DVector::zeros(p);
    let mut seen = vec![false; p];
    for record in reader.records() {
        let record = record.map_err(Error::from)?;
        if record.len() < 2 {
            return Err(Failure::Run(Error::Parse(
                "vector CSV rows must be index,value".into(),
            )));
        }
        let i: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad index {:?}", &record[0])))?;
        let value: f64 = record[1]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad value {:?}", &record[1])))?;
        if i >= p {
            return Err(Failure::Run(Error::Parse(format!(
                "vector index {i} out of range"
            ))));
        }
        v[i] = value;
        seen[i] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Failure::Run(Error::Parse("vector CSV is missing entries".into())));
    }
    Ok(v)
}

fn write_lowdim_fit(buf: &mut Vec<u8>, fit: &LowDimFit) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(buf);
    w.write_record(["kind", "index", "value"])?;
    for (i, v) in fit.beta.iter().enumerate() {
        w.write_record(["beta", &i.to_string(), &v.to_string()])?;
    }
    for (i, v) in fit.alpha_hat.iter().enumerate() {
        w.write_record(["alpha", &i.to_string(), &v.to_string()])?;
    }
    for (k, v) in fit.weights.weights().iter().enumerate() {
        w.write_record(["weight", &k.to_string(), &v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn fit_highdim(mut args: FitHighArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let config = ConfigMap::load(args.data.config.as_ref(), FIT_HIGH_KEYS)?;
    config.fill_parse(&mut args.lambda, "lambda")?;
    config.fill_enum(&mut args.lambda_rule, "lambda-rule")?;
    config.fill_bool(&mut args.cv, "cv")?;
    config.fill_parse(&mut args.grid_min, "grid-min")?;
    config.fill_parse(&mut args.grid_max, "grid-max")?;
    config.fill_parse(&mut args.grid_size, "grid-size")?;
    config.fill_parse(&mut args.folds, "folds")?;
    config.fill_parse(&mut args.seed, "seed")?;
    config.fill_parse(&mut args.a_const, "a-const")?;
    config.fill_parse(&mut args.r_x, "r-x")?;
    config.fill_parse(&mut args.sigma, "sigma")?;
    config.fill_parse(&mut args.beta_norm, "beta-norm")?;
    config.fill_parse(&mut args.rho, "rho")?;
    config.fill_path(&mut args.out, "out");

    let data = load_data(&mut args.data, &config)?;
    let ds = &data.dataset;
    let seed = args.seed.unwrap_or(0);
    let grid_size = args.grid_size.unwrap_or(30);
    let folds = args.folds.unwrap_or(5);
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("fit_highdim.csv"));

    let chosen: u32 =
        args.lambda.is_some() as u32 + args.lambda_rule.is_some() as u32 + args.cv as u32;
    if chosen != 1 {
        return Err(Failure::Usage(
            "choose exactly one of --lambda, --lambda-rule, --cv".into(),
        ));
    }

    let estimates = moments::MomentEstimates::estimate(ds)?;
    let mut extra: Vec<(&str, String)> = Vec::new();

    let (lambda, rule_name) = if let Some(v) = args.lambda {
        (v, "fixed")
    } else if args.cv {
        let grid = match (args.grid_min, args.grid_max) {
            (Some(lo), Some(hi)) if lo > 0.0 && hi >= lo => {
                let size = grid_size.max(2);
                let (lo_ln, hi_ln) = (lo.ln(), hi.ln());
                (0..size)
                    .map(|i| (lo_ln + (hi_ln - lo_ln) * i as f64 / (size - 1) as f64).exp())
                    .collect()
            }
            (None, None) => dantzig::default_lambda_grid(&estimates.gamma_hat, grid_size)?,
            _ => {
                return Err(Failure::Usage(
                    "--grid-min and --grid-max must be positive and given together".into(),
                ))
            }
        };
        let (best, table) = dantzig::cross_validate_lambda(ds, &grid, folds, seed)?;
        extra.push(("cv_grid_size", table.len().to_string()));
        (best, "cv")
    } else {
        let inputs = resolve_lambda_inputs(&args, ds, &estimates)?;
        let partition = missreg::partition_modalities(ds);
        let counts = missreg::compute_counts(ds, &partition);
        match args.lambda_rule.unwrap() {
            LambdaRuleArg::Unstructured => {
                let rho_default = counts.min_h() as f64 / ds.n_labelled() as f64;
                let rho = args
                    .rho
                    .unwrap_or(rho_default.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON));
                let lambda = dantzig::lambda_unstructured(
                    &inputs,
                    ds.p(),
                    rho,
                    ds.n_labelled(),
                    ds.n_unlabelled(),
                )?;
                // The effective sample sizes behind the two rule branches;
                // the minimum sample conditions scale with A^2 log p.
                extra.push(("rho", rho.to_string()));
                extra.push(("n_eff_labelled", (rho * ds.n_labelled() as f64).to_string()));
                extra.push((
                    "n_eff_cov",
                    (rho * rho * ds.n_labelled() as f64 + ds.n_unlabelled() as f64).to_string(),
                ));
                extra.push((
                    "a_sq_log_p",
                    (inputs.a * inputs.a * (ds.p() as f64).ln()).to_string(),
                ));
                (lambda, "unstructured")
            }
            LambdaRuleArg::Structured => {
                let lambda = dantzig::lambda_structured(
                    &inputs,
                    &counts,
                    partition.sizes(),
                    ds.n_unlabelled(),
                )?;
                let min_h = counts.min_h();
                let min_cross = (0..counts.num_modalities())
                    .flat_map(|g| (0..counts.num_modalities()).map(move |h| (g, h)))
                    .map(|(g, h)| counts.n_cross(g, h))
                    .min()
                    .unwrap_or(0);
                extra.push(("min_h", min_h.to_string()));
                extra.push((
                    "min_cross_plus_unlabelled",
                    (min_cross + ds.n_unlabelled()).to_string(),
                ));
                (lambda, "structured")
            }
        }
    };

    let fit = dantzig::fit_dantzig(ds, &LambdaSpec::Fixed(lambda))?;
    write_file(&out, |buf| io::write_sparse_vector_csv(buf, &fit.beta))?;

    let nonzero = fit.beta.iter().filter(|v| **v != 0.0).count();
    let mut fields: Vec<(&str, String)> = vec![
        ("command", json_str("fit-highdim")),
        ("rule", json_str(rule_name)),
        ("lambda", lambda.to_string()),
        ("objective", fit.objective.to_string()),
        ("iterations", fit.iterations.to_string()),
        ("nonzero", nonzero.to_string()),
        ("seed", seed.to_string()),
    ];
    fields.extend(extra);
    fields.push(("out", json_str(&out.display().to_string())));
    fields.push(("elapsed_ms", start.elapsed().as_millis().to_string()));
    print_metadata(&fields);
    Ok(())
}

/// Rule inputs: user-supplied values, else plug-ins from a unit-weight pilot
/// fit on the clipped pairwise covariance.
fn resolve_lambda_inputs(
    args: &FitHighArgs,
    ds: &MissingDataset,
    estimates: &moments::MomentEstimates,
) -> Result<LambdaInputs, Failure> {
    let r_x = args.r_x.unwrap_or_else(|| {
        (0..ds.p())
            .map(|j| estimates.sigma_hat[(j, j)])
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE)
            .sqrt()
    });
    let (sigma, beta_norm) = match (args.sigma, args.beta_norm) {
        (Some(s), Some(b)) => (s, b),
        (user_sigma, user_beta) => {
            let (lo, hi) = missreg::linalg::eigen_range(&estimates.sigma_hat);
            let clip = ClipConfig::new(lo.max(1e-6), hi.max(1e-6))?;
            let (sigma_pd, _) = moments::clip_covariance(&estimates.sigma_hat, &clip);
            let pilot = lowdim::fit_unit(ds, &sigma_pd)?;
            let s2 = sim::pilot_sigma2(ds, &sigma_pd, &pilot.beta)?;
            (
                user_sigma.unwrap_or(s2.sqrt()),
                user_beta.unwrap_or(pilot.beta.norm()),
            )
        }
    };
    Ok(LambdaInputs {
        a: args.a_const.unwrap_or(1.0),
        r_x,
        sigma,
        beta_norm,
    })
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let mut overrides = match &args.config {
        Some(path) => read_config(path)?,
        None => BTreeMap::new(),
    };
    let mut experiment = args.experiment.clone();
    let mut reps = args.reps;
    let mut seed = args.seed;
    // Config keys mirror the flags; remaining keys are design overrides
    // validated by the experiment itself.
    if let Some(v) = overrides.remove("experiment") {
        experiment.get_or_insert(v);
    }
    if let Some(v) = overrides.remove("reps") {
        if reps.is_none() {
            reps = Some(
                v.parse()
                    .map_err(|_| Failure::Usage(format!("reps={v} is not an integer")))?,
            );
        }
    }
    if let Some(v) = overrides.remove("seed") {
        if seed.is_none() {
            seed = Some(
                v.parse()
                    .map_err(|_| Failure::Usage(format!("seed={v} is not an integer")))?,
            );
        }
    }
    for entry in &args.sets {
        let Some((key, value)) = entry.split_once('=') else {
            return Err(Failure::Usage(format!("--set expects key=value, got {entry:?}")));
        };
        overrides.insert(key.trim().to_string(), value.trim().to_string());
    }
    let experiment =
        experiment.ok_or_else(|| Failure::Usage("--experiment is required".into()))?;

    let config = ExperimentConfig {
        name: experiment.clone(),
        reps,
        seed: seed.unwrap_or(1),
        overrides,
    };
    let result = sim::run_experiment(&config)?;
    write_file(&args.out, |buf| result.write_csv(buf))?;

    print_metadata(&[
        ("command", json_str("simulate")),
        ("experiment", json_str(&experiment)),
        ("reps", result.reps.to_string()),
        ("seed", result.seed.to_string()),
        ("resampled", result.resampled.to_string()),
        ("rows", result.rows.len().to_string()),
        ("out", json_str(&args.out.display().to_string())),
        ("elapsed_ms", start.elapsed().as_millis().to_string()),
    ]);
    Ok(())
}

fn moments_cmd(mut args: MomentsArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let config = ConfigMap::load(args.data.config.as_ref(), COMMON_KEYS)?;
    let data = load_data(&mut args.data, &config)?;
    let estimates = moments::MomentEstimates::estimate(&data.dataset)?;

    let gamma_path = PathBuf::from(format!("{}gamma.csv", args.out_prefix));
    let sigma_path = PathBuf::from(format!("{}sigma.csv", args.out_prefix));
    let spectrum_path = PathBuf::from(format!("{}spectrum.csv", args.out_prefix));

    write_file(&gamma_path, |buf| {
        io::write_vector_csv(buf, "gamma", &estimates.gamma_hat)
    })?;
    write_file(&sigma_path, |buf| io::write_matrix_csv(buf, &estimates.sigma_hat))?;
    let mut eigenvalues: Vec<f64> = estimates
        .sigma_hat
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());
    write_file(&spectrum_path, |buf| {
        io::write_vector_csv(buf, "eigenvalue", &DVector::from_vec(eigenvalues))
    })?;

    print_metadata(&[
        ("command", json_str("moments")),
        ("p", data.dataset.p().to_string()),
        ("n_labelled", data.dataset.n_labelled().to_string()),
        ("n_unlabelled", data.dataset.n_unlabelled().to_string()),
        ("out_prefix", json_str(&args.out_prefix)),
        ("elapsed_ms", start.elapsed().as_millis().to_string()),
    ]);
    Ok(())
}

fn export_groups(mut args: ExportArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let config = ConfigMap::load(args.data.config.as_ref(), COMMON_KEYS)?;
    let data = load_data(&mut args.data, &config)?;
    write_file(&args.out, |buf| io::write_grouped_csv(buf, &data))?;
    print_metadata(&[
        ("command", json_str("export-groups")),
        ("groups", data.dataset.num_patterns().to_string()),
        ("out", json_str(&args.out.display().to_string())),
        ("elapsed_ms", start.elapsed().as_millis().to_string()),
    ]);
    Ok(())
}
