//! File formats, configuration, experiment runner and command line for
//! multi-candidate cascaded speech translation. The algorithms live in
//! [`mcst_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod nbest;
pub mod parallel;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use mcst_core as core;
