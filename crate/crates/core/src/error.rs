use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A logarithm was requested for a non-positive distance.
    #[error("distance {0} m is not positive; clamp to the distance floor first")]
    NonPositiveDistance(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Not enough (or not diverse enough) data to identify the unknowns.
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// The centroid accumulator has never seen a report with positive weight.
    #[error("no transmitter fix: the centroid accumulator is empty")]
    NoFix,

    /// A covariance matrix stayed indefinite after the full jitter ladder.
    #[error("matrix of size {size} is not positive definite after jitter up to {max_jitter:e}")]
    NotPositiveDefinite { size: usize, max_jitter: f64 },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}
