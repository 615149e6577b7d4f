//! Configuration parsing and subcommands of the `mchks` binary.

pub mod commands;
pub mod config;

pub use commands::{CliError, CompareReport, RunOutcome, TwinReport};
pub use config::{parse_config, ConfigError, InitialSpec, OutputConfig, RunConfig};
