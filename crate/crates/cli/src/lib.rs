//! Command-line front end: CSV ingestion, model files and the `pfcr`
//! subcommands.

pub mod args;
pub mod commands;
pub mod csvio;
pub mod error;
pub mod modelfile;

pub use args::Cli;
pub use commands::run;
pub use error::{CliError, CliResult};
