//! Experiment front end: configuration parsing, dataset generation, running
//! training arms and writing CSV artifacts.

pub mod config;
pub mod experiment;

pub use config::{parse_config, parse_config_file, ConfigError, DatasetSource, ExperimentSpec};
pub use experiment::{evaluate_checkpoint, generate_data, run_experiment, EvalResult, ExperimentReport, RunResult};
