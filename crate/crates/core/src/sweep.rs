//! Grid sweep over cluster counts and label caps, and the selection rule over its cells.
//!
//! Every cell `(k_pick, k_place, cap)` is learned independently. A cell is selected by
//! feasibility first, then the fewest total clusters, then the lowest score; remaining
//! ties go to the smaller `(k_pick, k_place)` and then the smaller cap.
//!
//! [`sweep_grid`] learns each cell with the staged search alone: a cell whose staged
//! coloring fails is reported infeasible even if some other coloring of that size
//! exists. Without this, small cells with visually incoherent clusters win the
//! fewest-clusters rule.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coloring::{learn_with, ColoringContext, ColoringError, ColoringParams, SearchStats, Stage};
use crate::graph::labels_feasible;
use crate::otdist::DistanceMatrix;
use crate::partition::Partition;
use crate::trace::{Role, Trace};

/// Caps tried when none are given.
pub const DEFAULT_CAPS: [usize; 4] = [2, 3, 4, 6];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SweepError {
    #[error("the grid of cluster counts is empty")]
    EmptyGrid,
    #[error("the list of caps is empty")]
    EmptyCaps,
    #[error("no feasible cell in the sweep")]
    NoFeasibleCell,
    #[error(transparent)]
    Coloring(#[from] ColoringError),
}

/// One sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub k_pick: usize,
    pub k_place: usize,
    pub cap: usize,
}

impl CellKey {
    pub fn new(k_pick: usize, k_place: usize, cap: usize) -> Self {
        CellKey { k_pick, k_place, cap }
    }

    pub fn total(&self) -> usize {
        self.k_pick + self.k_place
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Infeasible {
        stage: Stage,
    },
    BudgetExceeded,
    Feasible {
        partition: Partition,
        v_score: f64,
        v_initial: f64,
        edits: usize,
        stats: SearchStats,
    },
}

impl CellOutcome {
    pub fn v_score(&self) -> Option<f64> {
        match self {
            CellOutcome::Feasible { v_score, .. } => Some(*v_score),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            CellOutcome::Infeasible { .. } => "infeasible",
            CellOutcome::BudgetExceeded => "budget_exceeded",
            CellOutcome::Feasible { .. } => "feasible",
        }
    }
}

/// Outcome of every requested cell.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: BTreeMap<CellKey, CellOutcome>,
}

impl SweepResult {
    pub fn get(&self, k_pick: usize, k_place: usize, cap: usize) -> Option<&CellOutcome> {
        self.cells.get(&CellKey::new(k_pick, k_place, cap))
    }

    /// Lowest score over the caps of one `(k_pick, k_place)` cell, if any cap was feasible.
    pub fn best_v(&self, k_pick: usize, k_place: usize) -> Option<f64> {
        self.cells
            .iter()
            .filter(|(k, _)| k.k_pick == k_pick && k.k_place == k_place)
            .filter_map(|(_, o)| o.v_score())
            .min_by(f64::total_cmp)
    }

    /// Score table with one row per `k_pick` and one column per `k_place`; `–` marks
    /// cells where no cap was feasible.
    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let rows: BTreeSet<usize> = self.cells.keys().map(|k| k.k_pick).collect();
        let cols: BTreeSet<usize> = self.cells.keys().map(|k| k.k_place).collect();
        write!(out, "k_pick\\k_place")?;
        for c in &cols {
            write!(out, ",{c}")?;
        }
        writeln!(out)?;
        for &r in &rows {
            write!(out, "{r}")?;
            for &c in &cols {
                match self.best_v(r, c) {
                    Some(v) => write!(out, ",{v:.6}")?,
                    None => write!(out, ",–")?,
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// One row per cell, marking the selected one.
    pub fn write_cells_csv<W: Write>(&self, selected: Option<CellKey>, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "k_pick,k_place,cap,status,v_score,v_initial,edits,nodes,joint,selected"
        )?;
        for (key, outcome) in &self.cells {
            let (v, v0, edits, nodes, joint) = match outcome {
                CellOutcome::Feasible {
                    v_score,
                    v_initial,
                    edits,
                    stats,
                    ..
                } => (
                    format!("{v_score:.6}"),
                    format!("{v_initial:.6}"),
                    edits.to_string(),
                    stats.nodes.to_string(),
                    stats.joint.to_string(),
                ),
                _ => Default::default(),
            };
            writeln!(
                out,
                "{},{},{},{},{v},{v0},{edits},{nodes},{joint},{}",
                key.k_pick,
                key.k_place,
                key.cap,
                outcome.label(),
                selected == Some(*key)
            )?;
        }
        Ok(())
    }
}

/// The selected cell and its partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub cell: CellKey,
    pub partition: Partition,
    pub v_score: f64,
}

/// `k` from 2 to one more than the number of distinct action labels of each role,
/// never above the number of observations of that role.
pub fn default_grid(trace: &Trace) -> Vec<(usize, usize)> {
    let bound = |role: Role| {
        let labels: BTreeSet<_> = trace
            .steps()
            .iter()
            .filter(|s| s.action.role == role)
            .map(|s| s.action)
            .collect();
        (labels.len() + 1).min(trace.ids_with_role(role).len())
    };
    let (bp, bq) = (bound(Role::Pick), bound(Role::Place));
    let mut grid = Vec::new();
    for kp in 2.min(bp)..=bp {
        for kq in 2.min(bq)..=bq {
            grid.push((kp, kq));
        }
    }
    grid
}

/// Learns every cell of `grid × caps` on `trace` with the staged search.
pub fn sweep_grid(
    trace: &Trace,
    d: &DistanceMatrix,
    grid: &[(usize, usize)],
    caps: &[usize],
    tau: Option<f64>,
) -> Result<SweepResult, SweepError> {
    let ctx = ColoringContext::new(trace, d, tau)?;
    let mut base = ColoringParams::new(1, 1, 1);
    base.tau = tau;
    base.joint_fallback = false;
    sweep_with(&ctx, grid, caps, &base)
}

/// [`sweep_grid`] on a prepared context. `base` supplies every parameter except the
/// cluster counts and the cap; its event log flag is ignored.
pub fn sweep_with(
    ctx: &ColoringContext<'_>,
    grid: &[(usize, usize)],
    caps: &[usize],
    base: &ColoringParams,
) -> Result<SweepResult, SweepError> {
    if grid.is_empty() {
        return Err(SweepError::EmptyGrid);
    }
    if caps.is_empty() {
        return Err(SweepError::EmptyCaps);
    }
    let keys: BTreeSet<CellKey> = grid
        .iter()
        .flat_map(|&(kp, kq)| caps.iter().map(move |&cap| CellKey::new(kp, kq, cap)))
        .collect();
    let outcomes: Vec<(CellKey, Result<CellOutcome, ColoringError>)> = keys
        .into_par_iter()
        .map(|key| {
            let params = ColoringParams {
                k_pick: key.k_pick,
                k_place: key.k_place,
                cap: key.cap,
                log: false,
                ..base.clone()
            };
            let outcome = match learn_with(ctx, &params) {
                Ok(l) => Ok(CellOutcome::Feasible {
                    v_score: l.v_score,
                    v_initial: l.v_initial,
                    edits: l.history.len(),
                    stats: l.stats,
                    partition: l.partition,
                }),
                Err(ColoringError::Infeasible { stage }) => Ok(CellOutcome::Infeasible { stage }),
                Err(ColoringError::BudgetExceeded(_)) => Ok(CellOutcome::BudgetExceeded),
                Err(e) => Err(e),
            };
            log::debug!("sweep cell {key:?}: {:?}", outcome.as_ref().map(CellOutcome::label));
            (key, outcome)
        })
        .collect();
    let mut cells = BTreeMap::new();
    for (key, outcome) in outcomes {
        cells.insert(key, outcome?);
    }
    Ok(SweepResult { cells })
}

/// Feasible cells ordered by total clusters, then score, then `(k_pick, k_place)`, then cap.
pub fn select_best(result: &SweepResult) -> Result<Selection, SweepError> {
    result
        .cells
        .iter()
        .filter_map(|(key, outcome)| match outcome {
            CellOutcome::Feasible { partition, v_score, .. } => Some((key, partition, *v_score)),
            _ => None,
        })
        .min_by(|a, b| {
            a.0.total()
                .cmp(&b.0.total())
                .then(a.2.total_cmp(&b.2))
                .then((a.0.k_pick, a.0.k_place).cmp(&(b.0.k_pick, b.0.k_place)))
                .then(a.0.cap.cmp(&b.0.cap))
        })
        .map(|(key, partition, v_score)| Selection {
            cell: *key,
            partition: partition.clone(),
            v_score,
        })
        .ok_or(SweepError::NoFeasibleCell)
}

/// Checks the selection against the structural validator at its own cap.
pub fn selection_is_valid(trace: &Trace, selection: &Selection) -> bool {
    let mut labels = vec![0; trace.num_observations()];
    for role in [Role::Pick, Role::Place] {
        for (&o, &c) in selection.partition.assignment(role) {
            labels[o] = c;
        }
    }
    labels_feasible(trace, &labels, Some(selection.cell.cap))
}
