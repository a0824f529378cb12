//! Learning bipartite, action-labeled abstract transition graphs from
//! observation–action traces of rearrangement tasks.
//!
//! The pipeline clusters observations per role by constrained graph coloring,
//! guided by an optimal-transport distance between spatial maps, then induces
//! the abstract graph, plans on it, and evaluates plans against ground truth.

pub mod baselines;
pub mod coloring;
pub mod envsim;
pub mod graph;
pub mod localizer;
pub mod oracle;
pub mod otdist;
pub mod partition;
pub mod sweep;
pub mod trace;

pub use coloring::{learn_partition, ColoringError, ColoringParams, Learned};
pub use envsim::{build_env, generate_dataset, sample_trace, Dataset, EnvKind, EnvSpec, GroundTruthEnv};
pub use graph::{evaluate, induce_graph, AbstractGraph, Metrics};
pub use localizer::{fit_prototypes, PrototypeClassifier};
pub use otdist::{distance_matrix, sinkhorn_divergence, DistanceMatrix, OTParams, SpatialMap};
pub use partition::{partition_equal_up_to_relabel, Partition};
pub use sweep::{select_best, sweep_grid, SweepResult};
pub use trace::{assign_roles, ActionLabel, ObsId, Role, Step, Trace};
