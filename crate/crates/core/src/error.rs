use thiserror::Error;

/// Errors raised across the channel, bound, allocation and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FpldError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dither {dither} outside [-step/2, step/2] for step {step}")]
    InvalidDither { dither: f64, step: f64 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("infeasible allocation: {0}")]
    Infeasible(String),

    #[error("KL divergence is infinite: q[{index}] = 0 where p[{index}] > 0")]
    InfiniteDivergence { index: usize },

    #[error("heterogeneous inputs supplied to the homogeneous evaluator; use the per-node variant")]
    Heterogeneous,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T, E = FpldError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> FpldError {
    FpldError::InvalidParameter(msg.into())
}
