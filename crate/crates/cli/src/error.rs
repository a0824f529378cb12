use std::path::{Path, PathBuf};

use absgraph::baselines::BaselineError;
use absgraph::envsim::EnvError;
use absgraph::graph::{GraphError, Node};
use absgraph::localizer::LocalizerError;
use absgraph::otdist::OtError;
use absgraph::partition::PartitionError;
use absgraph::sweep::SweepError;
use absgraph::trace::TraceError;
use thiserror::Error;

/// Process exit codes. Stable across releases.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const NO_FEASIBLE_CELL: u8 = 3;
    pub const NO_PATH: u8 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{path}: unsupported schema version {found}, expected {expected}")]
    Schema { path: PathBuf, found: u32, expected: u32 },
    #[error("no path from {start} to {goal} in the learned graph")]
    NoPath { start: Node, goal: Node },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Localizer(#[from] LocalizerError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

impl CliError {
    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn parse(path: &Path, message: impl ToString) -> CliError {
        CliError::Parse {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Sweep(SweepError::NoFeasibleCell) => exit::NO_FEASIBLE_CELL,
            CliError::NoPath { .. } => exit::NO_PATH,
            _ => exit::FAILURE,
        }
    }
}
