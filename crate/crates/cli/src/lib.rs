//! Command-line front end: configuration files, CSV ingestion, simulation
//! orchestration, sensitivity analysis, and report emission.

pub mod commands;
pub mod config;
pub mod ingest;
pub mod report;

use thiserror::Error;

/// Process exit codes: 0 success, 1 configuration error, 2 data error,
/// 3 numerical failure.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<dtrq::sim::SimError> for CliError {
    fn from(e: dtrq::sim::SimError) -> Self {
        match e {
            dtrq::sim::SimError::Config(msg) => CliError::Config(msg),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<dtrq::qlearn::QLearnError> for CliError {
    fn from(e: dtrq::qlearn::QLearnError) -> Self {
        CliError::Numerical(e.to_string())
    }
}
