//! Crate error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A run configuration failed schema or range validation.
    #[error("config error: {0}")]
    Config(String),

    /// An input file could not be read or written.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A data row could not be parsed; carries the 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// An operation precondition was violated by the caller.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A checkpoint file is malformed or has an unsupported format version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// The model kind does not support the requested operation.
    #[error("unsupported intensity kind: {0}")]
    UnsupportedKind(String),

    /// The objective or a gradient became non-finite during training.
    #[error("non-finite value in {context}: {value}")]
    NonFinite { context: String, value: f64 },

    /// An internal invariant failed; indicates a bug, not bad input.
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
