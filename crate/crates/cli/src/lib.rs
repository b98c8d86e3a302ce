//! Command-line front end of the Taylor-Couette transition toolkit.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod sweep;

pub use args::Cli;
pub use error::CliError;
