//! Configured end-to-end runs, golden-table checks and comparisons.

mod compare;
mod config;
mod run;
mod schedulers;
mod tables;

pub use compare::{compare_methods, MethodComparison, PairedRow};
pub use config::{ExperimentConfig, ExperimentMethod, TeacherSpec};
pub use run::{
    evaluate_samples, run_experiment, ExperimentReport, RunStatus, SampleEval, SeedReport,
    PROBE_SIGMAS,
};
pub use schedulers::{
    compare_schedulers, SchedulerComparison, SchedulerComparisonConfig, SchedulerRow,
};
pub use tables::{reproduce_tables, TableCheck, TablesReport};

/// Euler steps of the fine uniform solve that produces reference data.
pub const REFERENCE_SUBSTEPS: usize = 512;

const EVAL_STREAM: u64 = 30;
const SCHEDULER_STREAM: u64 = 31;
