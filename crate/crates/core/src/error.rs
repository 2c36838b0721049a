use thiserror::Error;

/// Errors surfaced by the simulation core.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller handed in data that breaks a documented precondition.
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// Configuration rejected during validation.
    #[error("invalid config: {0}")]
    Config(String),

    /// A delimited input file could not be parsed.
    #[error("parse error in {path} (row {row}): {msg}")]
    Parse {
        path: String,
        row: usize,
        msg: String,
    },

    /// A parsed value is out of its legal domain.
    #[error("validation error in {path} (row {row}): {msg}")]
    Validation {
        path: String,
        row: usize,
        msg: String,
    },

    /// A forward or backward pass produced a non-finite number.
    #[error("numerical error in {layer}: non-finite value")]
    Numerical { layer: &'static str },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
