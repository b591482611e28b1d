//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by dataset construction, moment estimation and the fitting
/// routines. Variant names are stable and appear verbatim in CLI output.
#[derive(Debug, Error)]
pub enum Error {
    #[error("EmptyDataset: no labelled rows were provided")]
    EmptyDataset,

    #[error("VariableNeverObserved: variable {0} is never observed in the labelled data")]
    VariableNeverObserved(usize),

    #[error("NonFiniteValue: row {row} contains a non-finite value")]
    NonFiniteValue { row: usize },

    #[error("UnlabelledRowIncomplete: row {row} has a missing response and missing covariates; unlabelled rows must be fully observed")]
    UnlabelledRowIncomplete { row: usize },

    #[error("ModalityNeverLabelled: modality {0} has no labelled observations")]
    ModalityNeverLabelled(usize),

    #[error("PairNeverObserved: modalities ({0}, {1}) are never jointly observed and no unlabelled data is present")]
    PairNeverObserved(usize, usize),

    #[error("ScaleExceeded: restricted-eigenvalue diagnostic supports p <= {max_p} and s <= {max_s}, got p = {p}, s = {s}")]
    ScaleExceeded {
        p: usize,
        s: usize,
        max_p: usize,
        max_s: usize,
    },

    #[error("SingularBlock: observed-block covariance is numerically singular")]
    SingularBlock,

    #[error("SingularGram: weighted Gram matrix is numerically singular (condition estimate {condition:.3e})")]
    SingularGram { condition: f64 },

    #[error("SingularDesign: design matrix for pattern {0} is numerically singular")]
    SingularDesign(usize),

    #[error("PatternTooSmall: pattern {0} has too few rows for the requested procedure")]
    PatternTooSmall(usize),

    #[error("FoldTooSmall: a cross-validation fold has too little data to form moments")]
    FoldTooSmall,

    #[error("NoCompleteCases: complete-case analysis needs at least p + 1 fully observed labelled rows")]
    NoCompleteCases,

    #[error("PDFailure: failed to generate a positive-definite covariance after {0} retries")]
    PDFailure(usize),

    #[error("UnknownExperiment: no experiment named {0:?}")]
    UnknownExperiment(String),

    #[error("Infeasible: the linear program has no feasible point at this lambda")]
    Infeasible,

    #[error("IterationCap: simplex iteration cap reached before optimality")]
    IterationCap,

    #[error("UnboundedLp: simplex detected an unbounded direction; the program is numerically degenerate")]
    UnboundedLp,

    #[error("InvalidInput: {0}")]
    InvalidInput(String),

    #[error("Parse: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
