use std::fmt;

use softsense_core::Error as CoreError;

/// Failure of a command, carrying the process exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config keys or option values (exit 1).
    #[error("{0}")]
    Usage(String),
    /// Unreadable or inconsistent input files (exit 2).
    #[error("{0}")]
    Data(String),
    /// Training or inference produced non-finite numbers (exit 3).
    #[error("{0}")]
    Numeric(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        CliError::Usage(msg.to_string())
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        CliError::Data(msg.to_string())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NumericDomain(_) | CoreError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            CoreError::Config(_) | CoreError::InvalidRatio(_) | CoreError::InvalidSpec(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
