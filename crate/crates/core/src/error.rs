use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A tensor or matrix did not have the shape an operation requires.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    /// An operation that needs at least one element received none.
    #[error("empty input to {0}")]
    EmptyInput(&'static str),
    /// An argument was outside its documented domain.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// A configuration value was inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A value failed validation (non-finite field, bad label, ...).
    #[error("validation failed: {0}")]
    Validation(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
