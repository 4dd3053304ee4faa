//! Command implementations behind the `cacc` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

pub use commands::{Overrides, RunReport};
pub use error::CliError;
