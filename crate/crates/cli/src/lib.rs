//! Command-line front end for `ypbp`: dataset files, run configuration,
//! structured-text reports and the command runners behind the `ypbp` binary.

pub mod commands;
pub mod config;
pub mod dataset_file;
mod error;
pub mod report;

pub use commands::{execute, execute_with, Extras};
pub use config::{Command, Inference, RunConfig};
pub use error::{CliError, Result};
pub use report::Report;
