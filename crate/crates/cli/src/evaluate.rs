//! The evaluate command: planning metrics of the learned graph and of baselines.

use std::path::Path;

use absgraph::baselines::{baseline_pipeline, Baseline, DensityParams};
use absgraph::graph::{evaluate, ground_truth_graph, node_states, write_metrics_csv, Metrics};
use absgraph::otdist::intra_cluster_score;
use absgraph::partition::Partition;
use absgraph::trace::{Role, Trace};
use serde::{Deserialize, Serialize};

use crate::dataset;
use crate::error::CliError;
use crate::io;
use crate::learn::{load_bundle, load_distances};

pub const DEFAULT_PAIRS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Density clustering read from the leaves of its hierarchy.
    Density,
    /// Density clustering with excess-of-mass selection.
    DensityEom,
    /// Agglomerative clustering, linkage and cut chosen by silhouette.
    Agglomerative,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Density => "density",
            BaselineKind::DensityEom => "density_eom",
            BaselineKind::Agglomerative => "agglomerative",
        }
    }

    /// The concrete baseline; silhouette cuts range over the cluster counts of `grid`.
    pub fn baseline(self, grid: &[(usize, usize)]) -> Baseline {
        match self {
            BaselineKind::Density => Baseline::Density(DensityParams::over_segmenting()),
            BaselineKind::DensityEom => Baseline::Density(DensityParams::new(3, 3)),
            BaselineKind::Agglomerative => {
                let mut ks_pick: Vec<usize> = grid.iter().map(|c| c.0).collect();
                let mut ks_place: Vec<usize> = grid.iter().map(|c| c.1).collect();
                ks_pick.sort_unstable();
                ks_pick.dedup();
                ks_place.sort_unstable();
                ks_place.dedup();
                Baseline::AgglomerativeSweep { ks_pick, ks_place }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateOptions {
    pub n_pairs: usize,
    pub seed: u64,
    pub baselines: Vec<BaselineKind>,
    /// Adds a row for the ground-truth graph.
    pub ground_truth: bool,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        EvaluateOptions {
            n_pairs: DEFAULT_PAIRS,
            seed: 0,
            baselines: Vec::new(),
            ground_truth: false,
        }
    }
}

fn ground_truth_partition(trace: &Trace, classes: &[usize]) -> Result<Partition, CliError> {
    Ok(Partition::from_labels(trace, classes)?)
}

/// One metrics row per method: ours first, then the requested baselines, then the
/// ground truth. Writes the rows as CSV to `out`.
pub fn cmd_evaluate(
    bundle_dir: &Path,
    dataset_dir: &Path,
    options: &EvaluateOptions,
    out: &Path,
) -> Result<Vec<(String, Metrics)>, CliError> {
    let bundle = load_bundle(bundle_dir)?;
    let ds = dataset::load(dataset_dir)?;
    let d = load_distances(bundle_dir)?;
    let states = &ds.manifest.states;
    let mut rows = Vec::new();

    let ours = node_states(&bundle.graph, states);
    rows.push((
        "ours".to_string(),
        evaluate(
            &bundle.graph,
            &ds.env,
            &ours,
            options.n_pairs,
            options.seed,
            bundle.manifest.v_score,
        )?,
    ));

    let grid = bundle.manifest.config.grid.clone().unwrap_or_default();
    for &kind in &options.baselines {
        let result = baseline_pipeline(&ds.trace, &d, &kind.baseline(&grid))?;
        log::info!(
            "{}: ({}, {}) clusters, {} violations",
            kind.name(),
            result.partition.k(Role::Pick),
            result.partition.k(Role::Place),
            result.violations.len()
        );
        let members = node_states(&result.graph, states);
        rows.push((
            kind.name().to_string(),
            evaluate(
                &result.graph,
                &ds.env,
                &members,
                options.n_pairs,
                options.seed,
                result.v_score,
            )?,
        ));
    }

    if options.ground_truth {
        let (g, members) = ground_truth_graph(&ds.env);
        let v = intra_cluster_score(&ground_truth_partition(&ds.trace, &ds.manifest.classes)?, &d);
        rows.push((
            "ground_truth".to_string(),
            evaluate(&g, &ds.env, &members, options.n_pairs, options.seed, v)?,
        ));
    }

    io::write_with(out, |w| write_metrics_csv(&rows, w))?;
    Ok(rows)
}
