//! JSON-configured experiment driver for `lyapunov-frames`.

pub mod config;
pub mod runner;

pub use config::{load_str, load_value, validate_value, ConfigIssue, ExperimentConfig, LoadedConfig};
pub use runner::{run, RunError, RunManifest};
