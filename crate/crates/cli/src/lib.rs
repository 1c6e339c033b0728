//! Experiment driver: configuration files, Monte-Carlo sweeps, result
//! summaries and the gradient self-check.

pub mod config_file;
pub mod experiment;
pub mod gradcheck;
pub mod summary;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },
    #[error("unknown configuration keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("{0}")]
    Core(#[from] simee_core::Error),
    #[error("i/o: {0}")]
    Io(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("no data rows in {0}")]
    Empty(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Csv(e.to_string())
    }
}
