//! Error type shared across the toolkit.

use std::path::PathBuf;
use thiserror::Error;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// I/O failure tied to a specific path.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A dataset or container file does not match its declared format.
    #[error("bad data in {path}: {detail}")]
    DataFormat { path: PathBuf, detail: String },

    /// Invalid configuration or arguments (unknown arch, bad budget, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A call-site contract was violated (shape/batch-size mismatch, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite values encountered during numeric computation.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Checkpoint exists but cannot be used with the current configuration.
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::DataFormat {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code for the CLI: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) => 1,
            Error::Io { .. } | Error::DataFormat { .. } | Error::IncompatibleCheckpoint(_) => 2,
            Error::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
