//! Command-line front end: loads CSV workspaces, runs analyses and writes
//! result tables with a JSON run manifest.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod workspace;

pub use commands::{run, run_command, RunSummary};
pub use config::{Cli, Command, Settings};
pub use error::CliError;
pub use workspace::Workspace;
