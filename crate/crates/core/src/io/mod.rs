//! Experiment files, seed sweeps and exports.

pub mod config;
pub mod experiment;
pub mod export;

pub use config::{parse_config, parse_config_str, ConfigFile, Experiment};
pub use experiment::{run_experiment, ResultBundle, RunSummary};
