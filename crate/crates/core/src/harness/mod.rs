//! Experiment configuration, trial execution and report output.

mod config;
mod report;
mod run;
mod suites;

pub use config::{Algorithm, ExperimentConfig, LossId, NoiseMode, SweepGrid};
pub use report::{
    read_jsonl, write_jsonl, write_report, write_summary_csv, write_sweep, SummaryRow,
};
pub use run::{
    derive, population_minimizer, replay_row, run, Aggregate, Derived, Experiment,
    ExperimentReport, MinimizerSource, TrialRow,
};
pub use suites::{run_suite, SUITES};

use crate::error::Result;

/// One report per grid point of `config.sweep`, in grid order.
pub fn sweep(config: &ExperimentConfig) -> Result<Vec<ExperimentReport>> {
    let points = config.sweep_points()?;
    points.iter().map(run).collect()
}
