//! Experiment runner for `rssfield`: TOML configuration, CSV formats, the
//! replicated synthetic studies and real-data ingestion.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod io;
pub mod real;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use experiments::{run_cases, run_replicates, MetricsRecord};
pub use io::emit_field;
pub use real::ingest_real;
