use thiserror::Error;

/// Errors produced by the inference library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SviglError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },

    #[error("non-finite matrix entry at ({row}, {col})")]
    NonFiniteEntry { row: usize, col: usize },

    #[error("zero diagonal entry at index {0}")]
    ZeroDiagonal(usize),

    #[error("non-positive diagonal entry at index {index}: {value}")]
    NonPositiveDiagonal { index: usize, value: f64 },

    #[error("non-finite value encountered in solver sweep {sweep} at row {row}")]
    SolverNonFinite { sweep: usize, row: usize },

    #[error("non-finite quantity in sample {0}")]
    NonFiniteSample(usize),

    #[error("non-finite KL estimate at iteration {0}")]
    NonFiniteKl(usize),

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("non-finite energy")]
    NonFiniteEnergy,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate kernel weights at seed {0}")]
    DegenerateKernel(usize),

    #[error("empty input")]
    EmptyInput,
}

pub type Result<T> = std::result::Result<T, SviglError>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(SviglError::DimensionMismatch { expected, got })
    }
}
