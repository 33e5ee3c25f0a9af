//! Experiment driver for coarse-graining agent-based models: configuration,
//! artifact formats, the measurement-to-model pipeline and model comparison.

pub mod analysis;
pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod reproduce;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{CgError, Result};
