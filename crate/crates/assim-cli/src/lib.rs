//! Experiment runner for the `assim` library: TOML configs in, CSV or JSON
//! reports out. The `assim` binary is a thin wrapper over [`cli::main_with`].

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod report;
pub mod run;

pub use config::{emit_config, parse_config, ExperimentConfig, Method};
pub use error::CliError;
pub use report::Report;
pub use run::{run_experiment, Dataset};
