//! Library side of the `pcssadv` binary: config schema, subcommands and
//! summary tables.

pub mod commands;
pub mod config;
pub mod error;
pub mod table;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
