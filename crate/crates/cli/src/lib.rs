//! Reproducible runs of the caption-feedback pipeline: configuration,
//! pipeline stages, commands with manifests, and gradient checks.

pub mod commands;
pub mod config;
pub mod gradcheck;
pub mod pipeline;

pub use commands::{run, Cli, Command, Report, RunDir};
pub use config::{ExperimentConfig, Overrides};
