//! Experiment runner for the `fparma` toolkit.
//!
//! Every command reads an [`ExperimentConfig`] JSON file and writes CSV
//! (tables) or JSON (structured results) into the output directory. Outputs
//! depend only on the config and the master seed, not on the worker count.

pub mod config;
pub mod error;
pub mod experiments;

pub use config::{Command, ExperimentConfig, ModelSource};
pub use error::{CliError, CliResult};
pub use experiments::{run, Outcome};
