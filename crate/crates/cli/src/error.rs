use std::path::Path;

use thiserror::Error;

/// Failure of a subcommand, mapped onto the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or malformed input, or a parameter out of range.
    #[error("{0}")]
    Validation(String),
    /// The input is well formed but cannot be satisfied, such as a budget
    /// under the graph's pinned minimum.
    #[error("{0}")]
    Infeasible(String),
    /// A library guarantee did not hold.
    #[error("{0}")]
    Contract(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Infeasible(_) => 2,
            CliError::Contract(_) => 3,
        }
    }

    pub fn validation(e: impl std::fmt::Display) -> Self {
        CliError::Validation(e.to_string())
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Validation(format!("{}: {e}", path.display()))
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;
