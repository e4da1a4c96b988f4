//! Configuration-driven runner for the `viscotomo` experiments.

pub mod config;
pub mod error;
pub mod run;

pub use config::{Command, ExperimentConfig};
pub use error::CliError;
pub use run::{run, RunOptions, OUTPUT_ENV};
