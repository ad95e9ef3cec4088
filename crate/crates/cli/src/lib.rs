//! Command-line front end for decomposer networks and the HTTP service used by
//! the σ-editing studio.

pub mod args;
pub mod commands;
pub mod error;
pub mod render;
pub mod server;
pub mod settings;
pub mod source;
pub mod studio;

pub use args::Cli;
pub use error::{CliError, CliResult};
