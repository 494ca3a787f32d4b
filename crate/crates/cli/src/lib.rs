//! Config-driven experiment runner for the `robust-dsgd` simulator: single
//! runs, parameter sweeps, mixing analysis and privacy-budget tables.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;

pub use commands::{RunOutcome, Source};
pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use experiment::Experiment;
