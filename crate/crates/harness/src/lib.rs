//! Experiment orchestration for the lengen laboratory: TOML configs with
//! scale presets, one runner per experiment family, run directories with
//! manifests, and standalone SVG charts.

pub mod config;
pub mod error;
pub mod experiments;
pub mod plot;
pub mod run;
pub mod svg;

pub use config::{ExperimentConfig, ExperimentKind, Scale};
pub use error::{HarnessError, Result};
pub use run::{execute, resolve, Overrides, RunManifest};
