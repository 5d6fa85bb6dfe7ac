//! File formats, checkpoints, run configuration and the `stmlp` command-line
//! tool for the st-MLP gesture recognizer in `stmlp-core`.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod convert;
pub mod dataset;
pub mod error;
pub mod report;
pub mod stream;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::{AppError, Result};
