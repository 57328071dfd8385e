//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions, invalid meta-parameters, bad actions, and
    /// other caller mistakes.
    #[error("configuration error: {0}")]
    Config(String),

    /// A learning step produced a non-finite quantity and was aborted.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The config file text could not be parsed.
    #[error("config parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A parsed config failed validation; `field` is the offending key.
    #[error("invalid config field `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn validation(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation { field: field.into(), message: msg.into() }
    }

    /// Process exit code for the CLI: 2 for numerical aborts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 2,
            _ => 1,
        }
    }
}
