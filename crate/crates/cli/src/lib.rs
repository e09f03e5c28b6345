//! Library side of the `svi-torus` binary: configuration, commands and exit codes.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{Experiment, Inequality, Overrides};
pub use config::ExperimentConfig;
pub use error::CliError;
