use cvi_core::Error;

/// Failures of a subcommand, split by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, unreadable inputs or malformed files (exit 2).
    #[error("{0}")]
    Usage(String),
    /// A check that ran to completion and did not pass (exit 1).
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::Io(_) | Error::Json(_) | Error::Structure(_) | Error::Lookup(_) => 2,
                _ => 1,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
