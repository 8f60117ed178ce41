//! File formats, cross-validation harness and command-line front end for
//! the gland segmentation toolkit built on `glandseg-core`.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod io;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentSummary, Progress};
