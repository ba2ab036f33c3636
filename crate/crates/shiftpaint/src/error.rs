//! Error type shared across the crate.
//!
//! Variants map onto the CLI exit codes: parameter/usage problems exit 1,
//! data and I/O problems exit 2, numerical failures exit 3.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or precondition violation (exit code 1).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Malformed, missing, or inconsistent data (exit code 2).
    #[error("data error: {0}")]
    Data(String),

    /// Filesystem failure with the offending path (exit code 2).
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Unreadable or incompatible checkpoint (exit code 2).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Non-finite value encountered during optimization (exit code 3).
    /// Carries the name of the offending loss term or tensor.
    #[error("numerical failure in `{0}`: non-finite value")]
    Numerical(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for this error per the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) => 1,
            Error::Data(_) | Error::Io { .. } | Error::Checkpoint(_) => 2,
            Error::Numerical(_) => 3,
        }
    }
}
