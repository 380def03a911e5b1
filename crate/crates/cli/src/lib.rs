//! Command-line front end: bank construction, expansion, batch emission and
//! the built-in experiments, plus the HTTP client for a remote backend.

pub mod backend;
pub mod commands;
pub mod config;
pub mod error;

pub use config::{resolve, Cli, FileConfig, Resolved};
pub use error::{CliError, Result, EXIT_INPUT, EXIT_PARTIAL};
