use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Variants are grouped by the category the command line maps onto exit codes:
/// configuration/usage problems, data problems, and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("malformed {format} file: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("non-finite value in {term}")]
    NonFinite { term: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn non_finite(term: impl Into<String>) -> Self {
        Error::NonFinite { term: term.into() }
    }

    /// Coarse classification used by the command line for exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorCategory::Usage,
            Error::NonFinite { .. } => ErrorCategory::Numeric,
            Error::Shape(_) | Error::Data(_) | Error::Format { .. } | Error::Io { .. } | Error::Json(_) => {
                ErrorCategory::Data
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Numeric,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
