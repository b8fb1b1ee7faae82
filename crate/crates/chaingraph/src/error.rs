use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// Invalid data, configuration or model failure.
    pub const FAILURE: i32 = 1;
    /// Command-line usage error (as reported by the argument parser).
    pub const USAGE: i32 = 2;
    /// Outputs were written but at least one fit did not converge.
    pub const NOT_CONVERGED: i32 = 3;
    /// Reading or writing a file failed.
    pub const IO: i32 = 4;
}

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] chaingraph_core::Error),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Io { .. } => exit::IO,
            AppError::Config(_) => exit::USAGE,
            _ => exit::FAILURE,
        }
    }
}

pub type Result<T> = std::result::Result<T, AppError>;
