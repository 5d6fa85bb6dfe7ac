use std::path::{Path, PathBuf};

use thiserror::Error;

/// Process exit codes, one per failure class.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const DATA: i32 = 4;
    pub const IO: i32 = 5;
}

#[derive(Debug, Error)]
pub enum AppError {
    /// Invalid run configuration or command-line value.
    #[error("config error: {0}")]
    Config(String),
    /// Dataset or checkpoint content that cannot be used.
    #[error("data error: {0}")]
    Data(String),
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AppError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        AppError::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => exit::CONFIG,
            AppError::Data(_) => exit::DATA,
            AppError::Io { .. } => exit::IO,
        }
    }
}

impl From<stmlp_core::Error> for AppError {
    fn from(e: stmlp_core::Error) -> Self {
        match e {
            stmlp_core::Error::Input(_) => AppError::Config(e.to_string()),
            _ => AppError::Data(e.to_string()),
        }
    }
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;
