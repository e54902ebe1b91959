//! Configuration, artifact writing and subcommands behind the `dualcp` binary.

pub mod commands;
pub mod config;
pub mod csv;
pub mod error;
pub mod svg;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
