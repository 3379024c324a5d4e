use alloc::string::String;

/// Errors raised by the core engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A configuration value violates its invariant.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A dataset or task request cannot be satisfied.
    #[error("data error: {0}")]
    Data(String),
    /// Two inputs that must agree in length or shape do not.
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape {
        /// expected length
        expected: usize,
        /// supplied length
        actual: usize,
    },
    /// A metric is undefined for the supplied arguments.
    #[error("metric undefined: {0}")]
    Metric(String),
}

/// Result alias for the core crate.
pub type Result<T> = core::result::Result<T, Error>;
