use std::path::PathBuf;

use svigl::SviglError;
use thiserror::Error;

/// A malformed or unsupported file, located by byte offset.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("byte {offset}: {message}")]
pub struct FormatError {
    pub offset: usize,
    pub message: String,
}

impl FormatError {
    pub fn new(offset: usize, message: impl Into<String>) -> Self {
        Self {
            offset,
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },

    #[error("numerical failure: {0}")]
    Numerical(SviglError),

    /// Some optimizers of a comparison failed; the others completed.
    #[error("{failed} of {total} optimizers failed")]
    PartialFailure { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } | CliError::Format { .. } => 3,
            CliError::Numerical(_) | CliError::PartialFailure { .. } => 4,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl From<SviglError> for CliError {
    fn from(e: SviglError) -> Self {
        match e {
            SviglError::InvalidParameter(msg) => CliError::Usage(msg),
            other => CliError::Numerical(other),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
