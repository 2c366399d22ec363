//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by dataset handling, model evaluation, and tuning.
#[derive(Debug, Error)]
pub enum GaisError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse error: {0}")]
    Csv(#[from] csv::Error),

    #[error("target column {0:?} not found in header")]
    MissingTarget(String),

    #[error("row {row} has {got} fields, expected {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },

    #[error("table has no data rows")]
    EmptyTable,

    #[error("target column has fewer than 2 distinct values")]
    DegenerateTarget,

    #[error("unseen categorical value {value:?} in column {column:?} at transform time")]
    UnseenCategory { column: String, value: String },

    #[error("need at least {min} instances, got {got}")]
    TooFewInstances { got: usize, min: usize },

    #[error("chunk overlap {overlap} must be smaller than window {window}")]
    InvalidOverlap { window: usize, overlap: usize },

    #[error("non-finite value in input features")]
    NonFiniteInput,

    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("training diverged (non-finite loss) on chunk {chunk}")]
    DivergedTraining { chunk: usize },

    #[error("class {0} has no training instances")]
    EmptyClass(usize),

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("hyperparameter {name}={value} outside the search space")]
    OutOfSpace { name: String, value: String },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("{0}")]
    InvalidConfig(String),
}

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad flags or configuration (exit 1).
    Usage,
    /// Unusable input data (exit 2).
    Data,
    /// Numerical breakdown during computation (exit 3).
    Numerical,
}

impl GaisError {
    pub fn category(&self) -> ErrorCategory {
        use GaisError::*;
        match self {
            InvalidConfig(_) | OutOfSpace { .. } | InvalidOverlap { .. } => ErrorCategory::Usage,
            NonFiniteInput | DivergedTraining { .. } | NumericalFailure(_) => {
                ErrorCategory::Numerical
            }
            _ => ErrorCategory::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, GaisError>;
