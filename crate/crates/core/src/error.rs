//! Error type shared by all modules.

use thiserror::Error;

/// Errors raised by tree manipulation, model evaluation and simulation.
#[derive(Debug, Error)]
pub enum Error {
    /// A labelled tree or tree literal violates a structural invariant.
    #[error("structural error: {0}")]
    Structural(String),
    /// Text could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
    /// An argument lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A random-variable model is inconsistent or references unknown symbols.
    #[error("model error: {0}")]
    Model(String),
    /// A scheme description is invalid; `field` names the offending entry.
    #[error("scheme error in `{field}`: {message}")]
    Scheme { field: String, message: String },
    /// The requested feature is not supported (for example implicit tableaux).
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// A floating-point computation produced a non-finite value.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Wrapped I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    /// Wrapped JSON failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Result alias using [`Error`].
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn scheme(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Scheme { field: field.into(), message: message.into() }
    }
}
