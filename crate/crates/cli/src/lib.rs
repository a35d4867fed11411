//! Library side of the `quditqpt` command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use error::{CliError, Result};
