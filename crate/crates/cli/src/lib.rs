//! Experiment driver: config parsing, runs and run comparison.

pub mod config;
pub mod run;

pub use config::{AttackKind, ConfigError, DatasetKind, ExperimentConfig, Method};
pub use run::{compare_runs, run_experiment, RunError, RunSummary};
