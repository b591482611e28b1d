//! Linear regression with missing covariates and unlabelled data.
//!
//! The labelled data may miss covariates in structured (blockwise) or
//! unstructured patterns; an additional covariate-only dataset can sharpen
//! the covariance estimate. Two estimators are provided:
//!
//! - [`lowdim`]: conditional-mean imputation of the missing covariates
//!   followed by weighted least squares, with oracle, per-pattern or
//!   pilot-based weights, optional two-fold cross-fitting and a thresholded
//!   variant for balanced unstructured missingness;
//! - [`dantzig`]: an `l1`-minimising selector constrained by
//!   pairwise-complete moment estimates, solved as a linear program, for the
//!   high-dimensional sparse case.
//!
//! [`patterns`] holds the grouped dataset representation, [`moments`] the
//! unbiased moment estimators and spectrum utilities, and [`sim`] a seeded
//! simulation harness that reproduces the reference experiments at desk
//! scale.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with nonpositive
// values, which `x <= 0.0` would not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dantzig;
pub mod error;
pub mod io;
pub mod linalg;
pub mod lowdim;
pub mod moments;
pub mod patterns;
pub mod sim;

pub use error::{Error, Result};
pub use patterns::{
    group_by_pattern, partition_modalities, compute_counts, LabelledGroup, MissingDataset,
    ModalityPartition, ObservationPattern, SampleCounts,
};
