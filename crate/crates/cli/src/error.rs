use std::path::PathBuf;

use thiserror::Error;

/// Failures of a subcommand, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("missing input file {0}")]
    MissingInput(PathBuf),

    #[error("no prediction for {} sample(s): {}", .0.len(), .0.join(", "))]
    MissingPrediction(Vec<String>),

    #[error("{} file(s) failed:\n  {}", .0.len(), .0.join("\n  "))]
    PerFile(Vec<String>),

    #[error(transparent)]
    Core(#[from] cafs_core::Error),
}

impl CliError {
    /// 1 for usage and validation, 2 for infeasible requests, 3 for bad data.
    pub fn exit_code(&self) -> u8 {
        use cafs_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::MissingInput(_) => 1,
            CliError::MissingPrediction(_) | CliError::PerFile(_) => 3,
            CliError::Core(e) => match e {
                E::InvalidConfig(_) | E::EmptyInput(_) | E::Size(_) | E::EmptyDataset => 1,
                E::InfeasibleCoverage(_) => 2,
                _ => 3,
            },
        }
    }
}
