//! Command-line front end: configuration loading and subcommands.

pub mod app;
pub mod config;

pub use app::{run, Cli, CliError};
pub use config::{load_config, GlobalConfig};
