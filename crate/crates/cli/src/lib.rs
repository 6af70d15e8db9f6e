//! Experiment configuration, drivers and reporting for `popforge`.

pub mod config;
pub mod harness;
pub mod summary;

pub use config::{Composition, ConfigError, ExperimentConfig, Mode, Retention};
pub use harness::{grid_search, run_experiment, FinalRow, GridResult, Outcome};
pub use summary::{summarize, SummaryTable};
