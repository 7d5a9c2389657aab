//! Files, cross-validation and the `dgrmil` command line around
//! [`dgrmil_core`].

pub mod bags;
pub mod benchmark;
pub mod commands;
pub mod config;
pub mod cv;
pub mod error;
pub mod params_io;
pub mod reports;

pub use dgrmil_core;
pub use error::{CliError, CliResult};
