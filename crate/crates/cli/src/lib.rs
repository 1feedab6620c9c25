//! Command implementations behind the `helm` binary.

pub mod commands;
pub mod config;
pub mod report;

pub use commands::{Overrides, RunSummary};
pub use config::{DatasetSource, ManifestSource, RunConfig, SyntheticSource};
