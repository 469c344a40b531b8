//! Command-line orchestration: dataset synthesis, training, unmixing,
//! evaluation, the OD/RGB ablation and the reader-study service.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{create_run_dir, stains_for, triptych, Method, TrainSummary, RESOLVED_CONFIG};
pub use config::{Overrides, RunConfig};
pub use error::{CliError, Result};
