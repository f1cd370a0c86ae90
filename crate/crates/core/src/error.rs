use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("spline order must be at least 1, got {0}")]
    InvalidOrder(usize),

    #[error("interior knots must be strictly increasing (knot {index} = {value})")]
    NonIncreasingKnots { index: usize, value: f64 },

    #[error("interior knot {index} = {value} lies outside (0, 1)")]
    KnotOutOfRange { index: usize, value: f64 },

    #[error("expected {expected} interior knots, got {found}")]
    KnotCountMismatch { expected: usize, found: usize },

    #[error("derivative order {deriv} must be smaller than the spline order {order}")]
    DerivativeTooHigh { deriv: usize, order: usize },

    #[error("evaluation point {0} lies outside [0, 1]")]
    PointOutOfRange(f64),

    #[error("penalty order {r} must satisfy 1 <= r < {order}")]
    InvalidPenaltyOrder { r: usize, order: usize },

    #[error("invalid loss parameter: {0}")]
    InvalidLoss(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no observations")]
    EmptyData,

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("io error: {0}")]
    Io(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("penalized system is singular: {0}")]
    SingularSystem(String),

    #[error("IRLS did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("numerical breakdown: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
