//! The learn command: distances, grid sweep, selection, graph, and localizer, written
//! as a self-contained bundle.

use std::io::Write;
use std::path::Path;

use absgraph::coloring::{learn_with, ColoringContext, ColoringParams, DEFAULT_NODE_BUDGET, DEFAULT_ROUNDS};
use absgraph::graph::{induce_graph_capped, AbstractGraph};
use absgraph::localizer::{
    cross_validate_maps, fit_prototypes, PrototypeClassifier, DEFAULT_FEATURE_SIDE, DEFAULT_FOLDS, DEFAULT_GAMMA,
};
use absgraph::otdist::{distance_matrix, DistanceMatrix, Epsilon, OTParams};
use absgraph::partition::Partition;
use absgraph::sweep::{default_grid, select_best, sweep_with, CellKey, SweepError, DEFAULT_CAPS};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, MANIFEST, TRACE};
use crate::error::CliError;
use crate::io;
use crate::SCHEMA_VERSION;

pub const BUNDLE: &str = "bundle.json";
pub const PARTITION: &str = "partition.json";
pub const GRAPH_JSON: &str = "graph.json";
pub const GRAPH_DOT: &str = "graph.dot";
pub const SWEEP_SUMMARY: &str = "sweep_summary.csv";
pub const SWEEP_CELLS: &str = "sweep_cells.csv";
pub const SEARCH_LOG: &str = "search_log.jsonl";
pub const DISTANCES: &str = "distances.csv";
pub const LOCALIZER: &str = "localizer.json";

/// Every setting of a learn run. Config files may give any subset of the fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    /// `(k_pick, k_place)` cells; derived from the trace's action labels when absent.
    pub grid: Option<Vec<(usize, usize)>>,
    pub caps: Vec<usize>,
    /// Affinity temperature; the median distance when absent.
    pub tau: Option<f64>,
    /// Sinkhorn regularization as a fraction of the map diagonal.
    pub epsilon: f64,
    pub downsample: usize,
    pub max_iters: usize,
    pub rounds: usize,
    pub node_budget: u64,
    pub gamma: f64,
    pub feature_side: usize,
    pub folds: usize,
    pub seed: u64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        let ot = OTParams::default();
        let epsilon = match ot.epsilon {
            Epsilon::Relative(e) | Epsilon::Absolute(e) => e,
        };
        LearnConfig {
            grid: None,
            caps: DEFAULT_CAPS.to_vec(),
            tau: None,
            epsilon,
            downsample: ot.downsample,
            max_iters: ot.max_iters,
            rounds: DEFAULT_ROUNDS,
            node_budget: DEFAULT_NODE_BUDGET,
            gamma: DEFAULT_GAMMA,
            feature_side: DEFAULT_FEATURE_SIDE,
            folds: DEFAULT_FOLDS,
            seed: 0,
        }
    }
}

impl LearnConfig {
    pub fn ot_params(&self) -> OTParams {
        OTParams {
            epsilon: Epsilon::Relative(self.epsilon),
            max_iters: self.max_iters,
            downsample: self.downsample,
            ..OTParams::default()
        }
    }
}

/// Command-line values that take precedence over a config file.
#[derive(Debug, Clone, Default)]
pub struct LearnOverrides {
    pub grid: Option<Vec<(usize, usize)>>,
    pub caps: Option<Vec<usize>>,
    pub tau: Option<f64>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
}

impl LearnOverrides {
    pub fn apply(self, mut config: LearnConfig) -> LearnConfig {
        if self.grid.is_some() {
            config.grid = self.grid;
        }
        if let Some(caps) = self.caps {
            config.caps = caps;
        }
        if self.tau.is_some() {
            config.tau = self.tau;
        }
        if let Some(e) = self.epsilon {
            config.epsilon = e;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        config
    }
}

/// Summary of a bundle, written as `bundle.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub schema_version: u32,
    /// SHA-256 of the dataset's manifest and trace files.
    pub dataset_sha256: String,
    pub env: String,
    /// Resolved configuration, with the grid filled in.
    pub config: LearnConfig,
    pub selected: CellKey,
    pub v_score: f64,
    pub v_initial: f64,
    pub refinement_edits: usize,
    pub localizer_cv_accuracy: f64,
    pub files: Vec<String>,
}

/// A bundle read back from disk.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub manifest: BundleManifest,
    pub partition: Partition,
    pub graph: AbstractGraph,
    pub localizer: PrototypeClassifier,
}

fn validate(config: &LearnConfig) -> Result<(), CliError> {
    if config.grid.as_ref().is_some_and(Vec::is_empty) {
        return Err(CliError::Usage("the grid of cluster counts is empty".into()));
    }
    if config.caps.is_empty() {
        return Err(CliError::Usage("the list of caps is empty".into()));
    }
    if config.folds < 2 {
        return Err(CliError::Usage(format!(
            "need at least two folds, got {}",
            config.folds
        )));
    }
    Ok(())
}

/// Learns an abstraction of the dataset in `dataset_dir` and writes the bundle to `out`.
///
/// The sweep tables are written even when no cell is feasible.
pub fn cmd_learn(dataset_dir: &Path, config: &LearnConfig, out: &Path) -> Result<BundleManifest, CliError> {
    validate(config)?;
    let ds = dataset::load(dataset_dir)?;
    let dataset_sha256 = io::sha256_hex(
        &[
            io::read_bytes(&dataset_dir.join(MANIFEST))?,
            io::read_bytes(&dataset_dir.join(TRACE))?,
        ]
        .concat(),
    );
    let d = distance_matrix(&ds.maps, &config.ot_params())?;
    let grid = config.grid.clone().unwrap_or_else(|| default_grid(&ds.trace));
    let ctx = ColoringContext::new(&ds.trace, &d, config.tau).map_err(SweepError::from)?;
    let mut base = ColoringParams::new(1, 1, 1);
    base.tau = config.tau;
    base.rounds = config.rounds;
    base.node_budget = config.node_budget;
    base.joint_fallback = false;
    let result = sweep_with(&ctx, &grid, &config.caps, &base)?;

    io::create_dir(out)?;
    io::write_with(&out.join(SWEEP_SUMMARY), |w| result.write_summary_csv(w))?;
    let selection = select_best(&result);
    io::write_with(&out.join(SWEEP_CELLS), |w| {
        result.write_cells_csv(selection.as_ref().ok().map(|s| s.cell), w)
    })?;
    let selection = selection?;
    log::info!("selected {:?} with score {:.6}", selection.cell, selection.v_score);

    // Replay the selected cell with the event log on; the search is deterministic.
    let params = ColoringParams {
        k_pick: selection.cell.k_pick,
        k_place: selection.cell.k_place,
        cap: selection.cell.cap,
        log: true,
        ..base
    };
    let learned = learn_with(&ctx, &params).map_err(SweepError::from)?;
    debug_assert_eq!(learned.partition, selection.partition);
    if let Some(events) = &learned.log {
        io::write_with(&out.join(SEARCH_LOG), |w| events.write_jsonl(w))?;
    }

    let graph = induce_graph_capped(&selection.partition, &ds.trace, Some(selection.cell.cap))?;
    let localizer = fit_prototypes(&ds.maps, &selection.partition, config.gamma, config.feature_side)?;
    let cv = cross_validate_maps(
        &ds.maps,
        &selection.partition,
        config.folds,
        config.seed,
        config.gamma,
        config.feature_side,
    )?;

    io::write_json(&out.join(PARTITION), &selection.partition)?;
    io::write_json(&out.join(GRAPH_JSON), &graph)?;
    io::write_with(&out.join(GRAPH_DOT), |w| w.write_all(graph.to_dot().as_bytes()))?;
    io::write_with(&out.join(DISTANCES), |w| d.write_csv(w))?;
    io::write_json(&out.join(LOCALIZER), &localizer)?;

    let manifest = BundleManifest {
        schema_version: SCHEMA_VERSION,
        dataset_sha256,
        env: ds.manifest.spec.kind.name().to_string(),
        config: LearnConfig {
            grid: Some(grid),
            ..config.clone()
        },
        selected: selection.cell,
        v_score: learned.v_score,
        v_initial: learned.v_initial,
        refinement_edits: learned.history.len(),
        localizer_cv_accuracy: cv,
        files: [
            PARTITION,
            GRAPH_JSON,
            GRAPH_DOT,
            SWEEP_SUMMARY,
            SWEEP_CELLS,
            SEARCH_LOG,
            DISTANCES,
            LOCALIZER,
        ]
        .iter()
        .map(|f| f.to_string())
        .collect(),
    };
    io::write_json(&out.join(BUNDLE), &manifest)?;
    Ok(manifest)
}

pub fn load_bundle(dir: &Path) -> Result<Bundle, CliError> {
    let path = dir.join(BUNDLE);
    let manifest: BundleManifest = io::read_json(&path)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(CliError::Schema {
            path,
            found: manifest.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(Bundle {
        manifest,
        partition: io::read_json(&dir.join(PARTITION))?,
        graph: io::read_json(&dir.join(GRAPH_JSON))?,
        localizer: io::read_json(&dir.join(LOCALIZER))?,
    })
}

pub fn load_distances(dir: &Path) -> Result<DistanceMatrix, CliError> {
    let path = dir.join(DISTANCES);
    DistanceMatrix::read_csv(io::open(&path)?).map_err(|e| CliError::parse(&path, e))
}
