//! Experiment orchestration and the command-line interface.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod tables;

pub use cli::{cli_dispatch, error_line};
pub use config::{DatasetVariant, ExperimentConfig, Pipeline, Scale};
pub use experiment::{prepare_splits, run_experiment, run_experiment_on, ExperimentResult};
pub use tables::{relative_improvement, reproduce_tables, reproduce_tables_on, Cell, TableReport};
