//! Configuration, multi-seed execution, CSV output and self-check suites
//! behind the `sage` command-line tool.

pub mod config;
pub mod error;
pub mod runner;
pub mod suites;

pub use config::{ExperimentConfig, RunSetup};
pub use error::{HarnessError, Result};
pub use runner::{run_experiment, write_outputs, ExperimentOutput, ResultRow};
