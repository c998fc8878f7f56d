//! Experiment registry, configuration and output formats behind the `kpl`
//! command.

pub mod config;
pub mod manifest;
pub mod output;
pub mod plot;
pub mod registry;
pub mod runner;

use kpl_core::SimError;
use thiserror::Error;

pub use config::ExperimentConfig;
pub use output::{ReportDocument, Table};
pub use runner::{run_experiment, run_to_dir, RunOutcome};

/// Exit status when every check passed.
pub const EXIT_PASS: i32 = 0;
/// Exit status for configuration, I/O and solver errors.
pub const EXIT_ERROR: i32 = 1;
/// Exit status when the run completed but some check failed.
pub const EXIT_CHECK_FAILED: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("unknown experiment `{name}`; did you mean one of: {}", suggestions.join(", "))]
    UnknownExperiment { name: String, suggestions: Vec<String> },

    #[error("I/O: {0}")]
    Io(String),

    #[error(transparent)]
    Sim(#[from] SimError),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
