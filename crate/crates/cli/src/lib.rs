//! Batch front end for funflow: daily CSV ingestion, declarative runs and
//! plot-ready exports.

pub mod config;
pub mod error;
pub mod ingest;
pub mod output;
pub mod pipeline;

pub use config::RunConfig;
pub use error::CliError;
pub use pipeline::{run_pipeline, write_synthetic, RunSummary, Verb};
