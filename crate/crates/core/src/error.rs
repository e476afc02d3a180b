use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unknown problem '{name}'; registered problems: {available}")]
    UnknownProblem { name: String, available: String },

    #[error("non-finite value from {what} at time index {index}")]
    NonFinite { what: String, index: usize },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("implicit solve failed to converge at time index {index} (residual {residual:.3e})")]
    FixedPoint { index: usize, residual: f64 },

    #[error("nested estimator limits exceeded: {0}")]
    NestedLimits(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("rate fit failed: {0}")]
    RateFit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
