//! File formats, run configuration and the command line for
//! [`retifluid_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pgm;
pub mod report;

pub use error::{CliError, CliResult};
