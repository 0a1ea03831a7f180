//! Library side of the `dabp` command: instance generation, single-instance
//! solving and batch benchmarks. The binary only parses flags and calls in.

pub mod bench;
pub mod config;
pub mod gen;
pub mod solve;

use std::path::PathBuf;

use dabp::diff::DiffError;
use dabp::factor_graph::{FormatError, InstanceError};
use dabp::model::ModelError;
use dabp::oracle::OracleError;
use dabp::trainer::TrainError;

pub use bench::{cmd_bench, AlgoSummary, BenchReport, BenchRow, CONVERGENCE_LIMITS};
pub use config::{FileConfig, SolveSettings};
pub use gen::{cmd_gen, FamilyArgs, Manifest, ManifestEntry};
pub use solve::{cmd_solve, solve_instance, Algo, SolveOutcome, Summary};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: FormatError },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Toml {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("checkpoint {path}: {source}")]
    Checkpoint { path: PathBuf, source: DiffError },
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
