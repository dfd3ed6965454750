//! Orchestration of the treatment-rule benchmark: configuration, replicate
//! fitting with timing, aggregation into summary tables and the file
//! formats used by the `itr-bench` binary.

use std::path::{Path, PathBuf};

pub mod config;
pub mod harness;
pub mod io;
pub mod report;

pub use config::{ConfigFile, ExperimentConfig, Profile, TimingMode};
pub use harness::{run_experiment, run_replicate, Experiment, FitStatus, ReplicateResult};
pub use report::{aggregate, SummaryRow, SummaryTable};

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] itrbench_core::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed input: {0}")]
    Format(String),
}

impl BenchError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
