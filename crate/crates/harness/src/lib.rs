//! Experiment harness: TOML configs, single and paired runs, sweeps, SVG
//! plots, and the bound-check entry point behind `nexus validate`.

pub mod config;
pub mod error;
pub mod plot;
pub mod run;
pub mod sweep;

use nexus_core::checks::{CheckOptions, CheckRegistry, CheckReport, Suite};

pub use config::ExperimentConfig;
pub use error::{ConfigError, HarnessError, Result};

/// Runs the registered bound checks for `suite`.
pub fn validate(suite: Suite, seed: u64, gamma: Option<f64>) -> CheckReport {
    CheckRegistry::default().run(suite, &CheckOptions { seed, gamma })
}
