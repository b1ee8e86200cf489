//! Subcommand implementations behind the `normalign` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod responses;

pub use config::RunConfig;
pub use error::{CliError, ErrorKind};
