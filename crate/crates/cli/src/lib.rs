//! Batch front end: generate datasets, learn abstraction bundles, evaluate them
//! against ground truth, and plan or localize with a learned bundle.

pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod learn;
pub mod plan;

pub use dataset::{cmd_generate, DatasetManifest};
pub use error::{exit, CliError};
pub use evaluate::{cmd_evaluate, BaselineKind, EvaluateOptions};
pub use learn::{cmd_learn, BundleManifest, LearnConfig, LearnOverrides};
pub use plan::{cmd_localize, cmd_plan, Localization, PlanOutput, SearchKind};

/// Version of every JSON document the commands write.
pub const SCHEMA_VERSION: u32 = 1;
