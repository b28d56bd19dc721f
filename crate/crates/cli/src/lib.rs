//! Command-line pipeline over the `cdee` library: data generation, training,
//! scoring, allocation, evaluation, budget sweeps and reports.

pub mod commands;
pub mod config;
pub mod output;
pub mod report;

pub use commands::{run, CliError, Command, Context};
pub use config::{parse_config, parse_config_str, PipelineConfig};
