//! Experiment driver for the multi-task dictionary learning toolkit. The
//! binary wires these modules into subcommands; integration tests drive
//! them directly.

pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod synth;

pub use config::{ExperimentConfig, FeatureMode, TrainingMode};
pub use error::{CliError, Result};
