//! Experiment plumbing: acceleration specs, sweep configuration, metrics and
//! the dataset runner.

mod accel;
mod config;
mod experiment;
mod metrics;

pub use accel::{sgdr_preset, AccelKind, AccelSpec, Driver, ADAM_DEFAULT_LAMBDA, RMSPROP_DEFAULT_LAMBDA};
pub use config::{RunConfig, DEFAULT_BUDGET, MOTION_BUDGET};
pub use experiment::{
    method_slug, run_experiment, write_plot_data, CellKey, CellOutcome, CellResult, ExperimentReport, SummaryCell,
};
pub use metrics::{aggregate_pmax, improvement_series, max_improvement, ImprovementSummary};
