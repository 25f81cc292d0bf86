use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A user-supplied setting is invalid. `field` names the offending
    /// setting in dotted-path form where one exists.
    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    /// A broken invariant inside the library (mismatched shapes, missing
    /// derivative entries, malformed tape).
    #[error("internal error: {0}")]
    Internal(String),

    /// A numeric failure that is not a configuration problem.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The loss or gradient became non-finite during training.
    #[error("non-finite value at iteration {iter}: {detail}")]
    NonFinite { iter: usize, detail: String },

    /// A reference solver blew up or failed to converge.
    #[error("solver failure at step {step}: {message}")]
    Diverged { step: usize, message: String },

    /// Stored artifacts disagree with each other (hash or length mismatch).
    #[error("integrity check failed: {0}")]
    Integrity(String),

    /// A file could not be parsed.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Error::Internal(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
