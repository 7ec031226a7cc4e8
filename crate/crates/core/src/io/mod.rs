//! Configuration, file formats and the command line driver.

pub mod cli;
pub mod config;
pub mod output;

pub use cli::run_command;
pub use config::{parse_config, parse_config_str, RunConfig};
pub use output::{read_snapshot, write_snapshot};
