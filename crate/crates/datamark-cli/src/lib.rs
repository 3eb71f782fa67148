//! Command-line pipeline and experiment harness.
//!
//! The library side exists so integration and acceptance tests can drive the
//! exact code the binary runs: configuration resolution, the end-to-end
//! benchmark harness, and the subcommand implementations.

pub mod commands;
pub mod config;
pub mod harness;

pub use commands::{CliError, CmdResult, ErrorKind};
pub use config::ExperimentConfig;
