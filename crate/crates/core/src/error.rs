//! Crate-wide error type.

use thiserror::Error;

/// Errors for feature-space operations, schedules, oracles and experiments.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("sample point outside the map domain: {0}")]
    OutOfDomain(String),

    #[error("operation requires the {required} representation")]
    UnsupportedRepresentation { required: &'static str },

    #[error("feature map carries no spectral basis; attach one to evaluate spectral vectors")]
    MissingSpectralBasis,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("step {m} is at or beyond the fixed horizon {horizon}")]
    HorizonExceeded { m: usize, horizon: usize },

    #[error("checkpoint {checkpoint} lies beyond the run length {steps}")]
    CheckpointBeyondRun { checkpoint: usize, steps: usize },

    #[error(
        "finite-horizon run certifies only the final iterate; \
         interior checkpoint {checkpoint} rejected (horizon {horizon})"
    )]
    InteriorCheckpoint { checkpoint: usize, horizon: usize },

    #[error(
        "moment recursion lost internal consistency at step {m}, index {index}: \
         second moment fell {gap:.3e} below the squared first moment"
    )]
    MomentConsistency { m: usize, index: usize, gap: f64 },

    #[error("non-finite statistic in trial {trial} at checkpoint {m}")]
    NonFiniteStatistic { trial: u64, m: usize },

    #[error("rate fit rejected: {0}")]
    RateFit(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("non-finite sample value: {0}")]
    NonFiniteSample(String),
}

pub type Result<T> = std::result::Result<T, Error>;
