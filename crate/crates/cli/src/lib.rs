//! Batch runner, verification suite and record inspection for relspec.

pub mod config;
pub mod inspect;
pub mod run;
pub mod verify;

pub use config::ExperimentConfig;
pub use run::{run_experiment, RunError, RunSummary};
pub use verify::{verify_suite, Level, VerifyOptions, VerifyReport};
