//! Batch front end: configuration files, the validate/solve/simulate/report
//! commands and their artifacts.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod report;

pub use commands::{cmd_report, cmd_simulate, cmd_solve, cmd_validate, CliError, Job, Overrides, Status};
pub use config::{ConfigError, Engine, RunConfig};
