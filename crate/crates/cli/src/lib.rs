//! Library side of the `edcs` command: config schema, subcommand bodies and
//! exit-code mapping.

pub mod commands;
pub mod config;
mod error;

pub use error::{CliError, Result};
