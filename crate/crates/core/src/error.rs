use thiserror::Error;

/// Errors surfaced by the filtering, resampling and initialisation primitives.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Every importance weight collapsed to zero; the caller decides whether
    /// this is an outlier to skip or a fatal model mismatch.
    #[error("all importance weights are zero (total degeneracy)")]
    AllWeightsZero,
    #[error("non-finite importance weight at particle {0}")]
    NonFiniteWeight(usize),
    #[error("estimate evaluated to a non-finite value")]
    NonFiniteResult,
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("covariance has zero spread; nothing to whiten")]
    DegenerateCovariance,
    #[error("truncation interval ({0}, {1}) is empty")]
    IntervalEmpty(f64, f64),
    #[error("all values are zero")]
    AllZero,
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("MCMC did not converge: split R-hat {rhat:.4} on {param} exceeds {threshold}")]
    NotConverged {
        param: String,
        rhat: f64,
        threshold: f64,
    },
    #[error("initial ensemble needs at least one posterior draw, none available")]
    InsufficientDraws,
    #[error("missing exogenous input for horizon {0}")]
    MissingExogenous(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
