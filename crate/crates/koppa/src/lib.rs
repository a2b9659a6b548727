//! Experiment runner for `koppa-core`: datasets, configuration, checkpoints
//! and reports.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod report;
pub mod runner;

pub use config::{Mode, RunConfig};
pub use report::RunReport;
pub use runner::{run, RunError, RunOutcome};
