use std::path::Path;
use std::process::ExitCode;

use thiserror::Error;

/// Failure of a subcommand, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, configuration or argument values (exit 2).
    #[error("{0}")]
    Usage(String),
    /// Unreadable, malformed or inconsistent input files (exit 3).
    #[error("{0}")]
    Data(String),
    /// Floating point breakdown during fitting or evaluation (exit 4).
    #[error("{0}")]
    Numerical(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        })
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }
}

impl From<envreg::Error> for CliError {
    fn from(err: envreg::Error) -> Self {
        match err {
            envreg::Error::InvalidConfig(_) => CliError::Usage(err.to_string()),
            envreg::Error::DimensionMismatch { .. } | envreg::Error::EmptySamples(_) => CliError::Data(err.to_string()),
            envreg::Error::Numerical(_) | envreg::Error::NotPositiveDefinite(_) | envreg::Error::RankDeficient { .. } => {
                CliError::Numerical(err.to_string())
            }
        }
    }
}
