//! Experiment orchestration for generative score inference: configuration,
//! data ingestion, the intervals / test / select pipelines, hyperparameter
//! search and reports.

pub mod config;
pub mod io;
pub mod pipeline;
pub mod report;
pub mod search;

pub use config::{ExperimentConfig, Task};
pub use pipeline::{run_experiment, StageError};
pub use report::{read_report, write_report, Report, ReportFormat};
