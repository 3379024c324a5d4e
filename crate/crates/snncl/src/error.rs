//! Application errors grouped by exit category.

use crate::idx::IdxError;

/// Failure categories of the command-line tool.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Invalid configuration or arguments.
    #[error("configuration error: {0}")]
    Config(String),
    /// Missing or malformed dataset or input files.
    #[error("data error: {0}")]
    Data(String),
    /// Failure while running or writing results.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl AppError {
    /// Process exit code for this category.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Data(_) => 3,
            AppError::Runtime(_) => 4,
        }
    }
}

impl From<snncl_core::Error> for AppError {
    fn from(e: snncl_core::Error) -> Self {
        use snncl_core::Error as E;
        match e {
            E::Config(_) => AppError::Config(e.to_string()),
            E::Data(_) | E::Shape { .. } => AppError::Data(e.to_string()),
            E::Metric(_) => AppError::Runtime(e.to_string()),
        }
    }
}

impl From<IdxError> for AppError {
    fn from(e: IdxError) -> Self {
        AppError::Data(e.to_string())
    }
}
