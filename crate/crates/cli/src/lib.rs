//! Config-driven runs of the trapcoh engines: single curves, pulse-count
//! scans with the limiting-rate fit, noise calibration and overlap dumps.
//! Every run writes CSV results plus a JSON manifest holding the resolved
//! configuration, from which the run can be repeated bit for bit.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod run;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
