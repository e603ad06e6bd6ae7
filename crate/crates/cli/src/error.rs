use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration or command-line usage.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed input data.
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] aberrant_core::Error),
    /// Every series failed.
    #[error("all series failed:\n{0}")]
    AllFailed(String),
}

impl CliError {
    /// Process exit code: 2 for usage and configuration, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 3,
        }
    }

    pub(crate) fn input(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Input { path: path.into(), message: message.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
