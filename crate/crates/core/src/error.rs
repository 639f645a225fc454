use thiserror::Error;

/// Errors raised by model evaluation, integration and the fitters.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value {value} lies outside the domain [{lower}, {upper}]")]
    OutsideDomain { value: f64, lower: f64, upper: f64 },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("model does not expose sufficient statistics (exponential-family form required)")]
    MissingSufficientStatistics,

    #[error("stochastic ascent diverged at step {step}: iterate norm {norm:.3e}")]
    Diverged { step: usize, norm: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
