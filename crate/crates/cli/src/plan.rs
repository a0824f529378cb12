//! The plan and localize commands: classify maps into graph nodes and search the graph.

use std::path::{Path, PathBuf};

use absgraph::graph::{plan_bfs, plan_dfs, Node};
use absgraph::localizer::NodeRef;
use absgraph::trace::ActionLabel;
use serde::{Deserialize, Serialize};

use crate::dataset::read_map;
use crate::error::CliError;
use crate::learn::{load_bundle, Bundle};
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchKind {
    Bfs,
    /// No shortest path existed; the plan came from depth-first search.
    DfsFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutput {
    pub schema_version: u32,
    pub start: Node,
    pub goal: Node,
    pub search: SearchKind,
    pub actions: Vec<ActionLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub map: PathBuf,
    pub class: usize,
    pub node: Node,
    pub logits: Vec<f64>,
}

fn node(r: NodeRef) -> Node {
    Node::new(r.role, r.cluster)
}

fn localize_one(bundle: &Bundle, path: &Path) -> Result<Localization, CliError> {
    let map = read_map(path)?;
    let (class, logits) = bundle.localizer.classify(&map)?;
    Ok(Localization {
        map: path.to_path_buf(),
        class,
        node: node(bundle.localizer.nodes[class]),
        logits,
    })
}

/// Node of each map under the bundle's localizer.
pub fn cmd_localize(bundle_dir: &Path, maps: &[PathBuf]) -> Result<Vec<Localization>, CliError> {
    let bundle = load_bundle(bundle_dir)?;
    maps.iter().map(|p| localize_one(&bundle, p)).collect()
}

/// Localizes both maps and plans between their nodes: a shortest plan when one exists,
/// otherwise the first depth-first plan.
pub fn cmd_plan(bundle_dir: &Path, start_map: &Path, goal_map: &Path) -> Result<PlanOutput, CliError> {
    let bundle = load_bundle(bundle_dir)?;
    let start = localize_one(&bundle, start_map)?.node;
    let goal = localize_one(&bundle, goal_map)?.node;
    let g = &bundle.graph;
    let (search, actions) = match plan_bfs(g, start, goal)?.into_iter().next() {
        Some(plan) => (SearchKind::Bfs, plan),
        None => {
            let plan = plan_dfs(g, start, goal, 4 * g.num_nodes())?.ok_or(CliError::NoPath { start, goal })?;
            log::warn!("no shortest plan from {start} to {goal}; using depth-first fallback");
            (SearchKind::DfsFallback, plan)
        }
    };
    Ok(PlanOutput {
        schema_version: SCHEMA_VERSION,
        start,
        goal,
        search,
        actions,
    })
}
