//! Experiment harness: generated train/test splits, simulated labelers,
//! synthesis sweeps over budgets and noise levels, and JSON/CSV/SVG reports.

mod experiment;
pub mod plot;
mod report;
pub mod targets;

pub use experiment::{f1, median, run_experiment, BenchError, ExperimentReport, ExperimentSpec, RunRecord, SearchSpace, SummaryRow};
pub use targets::{duration_targets, plain_targets, resolve_target, target, Target, TRAJECTORY_TARGETS};
