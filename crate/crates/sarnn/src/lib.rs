//! Standard-library companion to [`sarnn_core`]: TOML run configurations
//! and presets, dataset and checkpoint files, training and evaluation
//! artifacts, and the `sarnn` command-line front end.

pub mod artifacts;
pub mod cli;
pub mod commands;
pub mod config;
mod error;
pub mod fsutil;
pub mod store;

pub use error::{Error, Result};
pub use sarnn_core as core;
