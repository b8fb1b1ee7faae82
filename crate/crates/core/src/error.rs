use alloc::string::String;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("variable {var} has fewer than two distinct observed values")]
    DegenerateVariable { var: usize },

    #[error("all values are missing")]
    AllMissing,

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite moment at sample {sample}, time {time}, variable {var}")]
    NonFiniteMoment { sample: usize, time: usize, var: usize },

    #[error("zero coordinate-descent denominator at ({row}, {col})")]
    ZeroDenominator { row: usize, col: usize },

    #[error("covariance diagonal must be strictly positive (entry {0})")]
    NonPositiveDiagonal(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = core::result::Result<T, Error>;
