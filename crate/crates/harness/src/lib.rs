//! Command-line harness: run configuration, persistence, Wasserstein
//! distances and the end-to-end experiments.

pub mod config;
pub mod error;
pub mod experiments;
pub mod run;
pub mod wasserstein;

pub use config::{Mode, RunConfig};
pub use error::{HarnessError, Result};
