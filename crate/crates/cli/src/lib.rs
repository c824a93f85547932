//! Benchmark sweeps, training runs, run comparison and the signed-rank test
//! behind the `fdcnn` command.

pub mod bench;
pub mod error;
pub mod runs;
pub mod stats;

pub use error::{CliError, Result};

/// Environment variable holding the default worker thread count.
pub const THREADS_ENV: &str = "FDCNN_THREADS";
