use std::fmt::Display;
use std::path::Path;

/// Failure classes, each with its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Verify(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Invalid(_) => 1,
            Self::Io(_) => 2,
            Self::NotFound(_) => 3,
            Self::Verify(_) => 4,
        }
    }

    pub fn io(path: &Path, err: impl Display) -> Self {
        Self::Io(format!("{}: {err}", path.display()))
    }
}

impl From<beamsim::Error> for CliError {
    fn from(e: beamsim::Error) -> Self {
        match e {
            beamsim::Error::NotFound { .. } => Self::NotFound(e.to_string()),
            _ => Self::Invalid(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
