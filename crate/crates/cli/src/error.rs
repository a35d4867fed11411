use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const CONFIG: u8 = 2;
    pub const NUMERIC: u8 = 3;
    pub const UNSUPPORTED_DIMENSION: u8 = 4;
    pub const SINGULAR: u8 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
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
    Core(#[from] quditqpt::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        use quditqpt::Error as E;
        match self {
            CliError::Config(_) | CliError::Io { .. } | CliError::Format { .. } => exit::CONFIG,
            CliError::Core(e) => match e {
                E::UnsupportedDimension(_) => exit::UNSUPPORTED_DIMENSION,
                E::SingularBeyondRecovery { .. } => exit::SINGULAR,
                E::InvalidParameter(_)
                | E::BadWeights(_)
                | E::BadProbability(_)
                | E::BadIndices { .. }
                | E::OutOfRange { .. }
                | E::GeometryMismatch(_) => exit::CONFIG,
                _ => exit::NUMERIC,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
