//! File formats and the `shiftkit` command line on top of
//! [`shiftkit_core`].

pub mod cli;
mod error;
pub mod format;
pub mod json;
mod report;

pub use error::CliError;
