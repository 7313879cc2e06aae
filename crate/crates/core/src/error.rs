use thiserror::Error;

use crate::gaussian::GaussianCloud;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch { expected: Vec<usize>, found: Vec<usize> },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("format error in field `{field}`: {reason}")]
    Format { field: &'static str, reason: String },

    /// Training hit a non-finite loss or gradient. Carries the last cloud
    /// whose loss was finite so callers can persist it.
    #[error("non-finite {what} at iteration {iteration}")]
    Diverged {
        iteration: usize,
        what: &'static str,
        last_good: Box<GaussianCloud>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable numeric code shared by the CLI error line and the C ABI.
    pub fn code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) => 1,
            Error::InvalidArgument(_) => 2,
            Error::DimensionMismatch { .. } => 3,
            Error::InvalidConfig(_) => 4,
            Error::Format { .. } => 5,
            Error::Diverged { .. } => 6,
            Error::Io(_) => 7,
            Error::Json(_) => 8,
        }
    }

    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Format { .. } => "format",
            Error::Diverged { .. } => "diverged",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn dims(expected: &[usize], found: &[usize]) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }

    pub(crate) fn format(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            field,
            reason: reason.into(),
        }
    }
}
