use std::path::PathBuf;

use glass_core::Error as CoreError;

pub type Result<T, E = AppError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Process exit codes of the command-line driver.
pub mod exit {
    pub const OK: i32 = 0;
    /// I/O and malformed input files.
    pub const FAILURE: i32 = 1;
    /// Invalid configuration or command line.
    pub const CONFIG: i32 = 2;
    /// Training produced a non-finite gradient.
    pub const TRAINING: i32 = 3;
    /// Model and data shapes disagree.
    pub const DIMENSION: i32 = 4;
}

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        AppError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => exit::CONFIG,
            AppError::Io { .. } | AppError::Format { .. } => exit::FAILURE,
            AppError::Core(e) => match e {
                CoreError::InvalidConfig(_) | CoreError::InvalidSigma(_) | CoreError::InvalidBand { .. } | CoreError::InvalidRate { .. } => {
                    exit::CONFIG
                }
                CoreError::NonFiniteGradient { .. } => exit::TRAINING,
                CoreError::DimensionMismatch { .. } | CoreError::LengthMismatch { .. } => exit::DIMENSION,
                _ => exit::FAILURE,
            },
        }
    }
}
