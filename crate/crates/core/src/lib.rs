//! Diagnostics for deep ensembles evaluated on in-distribution (InD) and
//! out-of-distribution (OOD) test sets.
//!
//! The crate consumes per-model class-probability predictions and provides:
//!
//! - ensemble formation and homogeneous/heterogeneous ensemble construction ([`data`]),
//! - per-datapoint scores and calibration summaries ([`metrics`]),
//! - exact diversity/uncertainty decompositions ([`decomposition`]),
//! - conditional-diversity analysis with KDE, kernel ridge regression and a
//!   permutation test ([`conditional`]),
//! - InD-vs-OOD linear trend fits and effective robustness ([`trends`]),
//! - per-datapoint improvement comparisons with an MMD two-sample test ([`improvement`]),
//! - a 1-D heteroskedastic Gaussian-process reference ([`gp`]),
//! - a synthetic prediction generator for end-to-end checks ([`simulate`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditional;
pub mod data;
pub mod decomposition;
mod error;
pub mod gp;
pub mod improvement;
pub mod io;
mod linalg;
pub mod metrics;
pub mod simulate;
pub mod trends;

pub use data::{
    EnsembleDef, LabelVector, LogitMatrix, ModelInfo, ModelPrediction, PredictionStore,
    ProbMatrix,
};
pub use decomposition::{DecompositionRecord, Family};
pub use error::{Error, Result};
pub use metrics::{CalibrationSummary, MetricKind, MetricVector};

/// Lower clamp applied to likelihoods before taking logarithms.
pub const LIKELIHOOD_EPS: f64 = 1e-12;

/// Tolerance for the per-point decomposition identities.
pub const IDENTITY_TOL: f64 = 1e-10;
