use crate::container::ContainerError;

/// Command failures, each mapped to a process exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid configuration or flags (exit 2).
    #[error("config error: {0}")]
    Config(String),
    /// Unreadable, malformed or inconsistent data (exit 3).
    #[error("data error: {0}")]
    Data(String),
    /// Statistical degeneracy escalated by `--strict` (exit 4).
    #[error("degenerate: {0}")]
    Degenerate(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Degenerate(_) => 4,
        }
    }
}

impl From<ContainerError> for CliError {
    fn from(e: ContainerError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<uqvox_core::Error> for CliError {
    fn from(e: uqvox_core::Error) -> Self {
        match e {
            uqvox_core::Error::Config(_) | uqvox_core::Error::Generation(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
