//! File formats, model files, parallel builders and the command pipeline
//! behind the `uqvox` tool. The algorithms themselves live in `uqvox_core`.

pub mod commands;
pub mod config;
pub mod container;
pub mod error;
pub mod model;
pub mod parallel;

pub use container::{read_grid, write_grid, ContainerError, Grid};
pub use error::CliError;
