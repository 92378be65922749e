//! Pipeline orchestration for the statetrait toolkit: run configuration,
//! staged execution over plain-file artifacts, and report emission.

pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{ProviderMode, ProvidersConfig, RunConfig, Stage};
pub use pipeline::{list_output_files, run, RunOutcome};
