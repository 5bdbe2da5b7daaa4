use std::path::{Path, PathBuf};

use gasnet_core::dae::{DaeError, ScenarioError};
use gasnet_core::sim::SimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot parse {kind} file {}: {message}", path.display())]
    Parse {
        kind: &'static str,
        path: PathBuf,
        message: String,
    },
    #[error("invalid network: {0}")]
    Network(String),
    #[error("solver failed: {0}")]
    Solver(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Parse { .. } => 3,
            CliError::Network(_) => 4,
            CliError::Solver(_) => 5,
            CliError::Io { .. } => 6,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn scenario(path: &Path, e: ScenarioError) -> Self {
        CliError::Parse {
            kind: "scenario",
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

impl From<DaeError> for CliError {
    fn from(e: DaeError) -> Self {
        match e {
            DaeError::NonPositivePressure { .. } => CliError::Solver(e.to_string()),
            other => CliError::Network(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Dae(d @ (DaeError::MissingSupply(_) | DaeError::MissingDemand(_))) => CliError::Network(d.to_string()),
            SimError::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Solver(other.to_string()),
        }
    }
}
