//! Batch driver for the `aberrant` command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod io;
pub mod report;
pub mod run;

pub use error::{CliError, CliResult};
