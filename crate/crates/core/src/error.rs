use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("cardinality budget {q} exceeds vector length {len}")]
    CardinalityTooLarge { q: usize, len: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("response value {value} at index {index} is not a 0/1 class label")]
    InvalidLabel { index: usize, value: f64 },

    #[error(
        "enumeration requires {required} evaluations but the budget is {budget}; \
         use the upper-bound mode or a smaller instance"
    )]
    BudgetExceeded { required: u128, budget: u128 },

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    #[error("log of zero residual sum of squares (perfect fit); the scale-free criterion is undefined")]
    LogSingularity,

    #[error("empty tuning grid")]
    EmptyGrid,

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_)
            | Error::Unsupported(_)
            | Error::CardinalityTooLarge { .. }
            | Error::EmptyGrid => 2,
            Error::DimensionMismatch { .. }
            | Error::NonFinite { .. }
            | Error::InvalidLabel { .. }
            | Error::Parse { .. }
            | Error::Io(_) => 3,
            Error::BudgetExceeded { .. } | Error::NonConvergence { .. } | Error::LogSingularity => {
                4
            }
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
