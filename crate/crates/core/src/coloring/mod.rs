//! Vision-guided constrained coloring of pick and place observations.
//!
//! The pipeline seeds the pick side from visual affinity alone, colors the place side
//! with DSATUR against those seeds, recolors pick against the frozen place side, and
//! finishes with an alternating local search. If the staged searches fail, a joint
//! backtracking search over both roles decides whether any coloring exists, so a
//! reported infeasibility is a proof rather than an artifact of the seeds.

mod conflict;
mod dsatur;
mod refine;
mod seed;
mod state;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use conflict::{build_conflict_graph, ConflictGraph};
pub use dsatur::{dsatur_color, SearchFailure};
pub use refine::{Edit, RefineStep};
pub use seed::seed_pick_greedy;
pub use state::{ColoringState, Infeasibility};

use crate::graph::{edges_from, labels_feasible, structural_violations, Node};
use crate::otdist::{affinity, DistanceMatrix};
use crate::partition::Partition;
use crate::trace::{ActionLabel, ObsId, Role, Trace, TraceIndex};
use conflict::conflict_graph;
use dsatur::{Problem, Search};
use refine::Refiner;
use state::NONE;

pub const DEFAULT_ROUNDS: usize = 6;
pub const DEFAULT_NODE_BUDGET: u64 = 1_000_000;
const LOG_LIMIT: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Seed,
    Place,
    Pick,
    Joint,
    Refine,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Seed => "seed",
            Stage::Place => "place",
            Stage::Pick => "pick",
            Stage::Joint => "joint",
            Stage::Refine => "refine",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ColoringError {
    #[error("no feasible coloring (failed at the {stage} stage)")]
    Infeasible { stage: Stage },
    #[error("search budget of {0} nodes exhausted")]
    BudgetExceeded(u64),
    #[error("inconsistent trace: observation {obs} reaches both {dsts:?} under {action}")]
    InconsistentTrace {
        obs: ObsId,
        action: ActionLabel,
        dsts: [ObsId; 2],
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColoringParams {
    pub k_pick: usize,
    pub k_place: usize,
    pub cap: usize,
    /// Affinity temperature; the median off-diagonal distance when unset.
    pub tau: Option<f64>,
    pub rounds: usize,
    pub node_budget: u64,
    /// Fall back to a joint search over both roles when the staged search fails, so
    /// that `Infeasible` means no feasible partition exists.
    pub joint_fallback: bool,
    pub log: bool,
}

impl ColoringParams {
    pub fn new(k_pick: usize, k_place: usize, cap: usize) -> Self {
        ColoringParams {
            k_pick,
            k_place,
            cap,
            tau: None,
            rounds: DEFAULT_ROUNDS,
            node_budget: DEFAULT_NODE_BUDGET,
            joint_fallback: true,
            log: false,
        }
    }
}

/// Search log entries, written as JSON lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SearchEvent {
    StageStart {
        stage: Stage,
    },
    StageFailed {
        stage: Stage,
        budget_exceeded: bool,
    },
    Decide {
        stage: Stage,
        obs: ObsId,
        size: usize,
        color: usize,
    },
    Reject {
        stage: Stage,
        obs: ObsId,
        color: usize,
        reason: Infeasibility,
    },
    Backtrack {
        stage: Stage,
        obs: ObsId,
    },
    Edit {
        round: usize,
        role: Role,
        edit: Edit,
        v_before: f64,
        v_after: f64,
    },
    Recolor {
        round: usize,
        role: Role,
        adopted: bool,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    events: Vec<SearchEvent>,
    limit: usize,
    dropped: usize,
}

impl EventLog {
    pub fn new(limit: usize) -> Self {
        EventLog {
            events: Vec::new(),
            limit,
            dropped: 0,
        }
    }

    pub fn push(&mut self, e: SearchEvent) {
        if self.events.len() < self.limit {
            self.events.push(e);
        } else {
            self.dropped += 1;
        }
    }

    pub fn events(&self) -> &[SearchEvent] {
        &self.events
    }

    /// Events discarded after the limit was reached.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub nodes: u64,
    pub backtracks: u64,
    /// The joint search over both roles was needed.
    pub joint: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Learned {
    pub partition: Partition,
    pub v_score: f64,
    /// Score of the Stage 3 coloring, before refinement.
    pub v_initial: f64,
    pub history: Vec<RefineStep>,
    pub stats: SearchStats,
    pub log: Option<EventLog>,
}

/// A trace with its dense distance table, shared by every search over it.
#[derive(Debug, Clone)]
pub struct ColoringContext<'t> {
    trace: &'t Trace,
    index: TraceIndex,
    dist: Vec<f64>,
    n: usize,
    tau: f64,
    ids: [Vec<ObsId>; 2],
    split: [f64; 2],
}

impl<'t> ColoringContext<'t> {
    pub fn new(trace: &'t Trace, d: &DistanceMatrix, tau: Option<f64>) -> Result<Self, ColoringError> {
        let n = trace.num_observations();
        let dist = d
            .dense_by_id(n)
            .map_err(|e| ColoringError::InvalidInput(e.to_string()))?;
        let tau = tau.unwrap_or_else(|| d.median_off_diagonal());
        if !(tau.is_finite() && tau > 0.0) {
            return Err(ColoringError::InvalidInput(format!("tau must be positive, got {tau}")));
        }
        let index = TraceIndex::new(trace);
        for (obs, out) in index.outgoing.iter().enumerate() {
            for (x, &(a, t)) in out.iter().enumerate() {
                if let Some(&(_, u)) = out[x + 1..].iter().find(|&&(b, u)| b == a && u != t) {
                    return Err(ColoringError::InconsistentTrace {
                        obs,
                        action: a,
                        dsts: [t, u],
                    });
                }
            }
        }
        let ids = [trace.ids_with_role(Role::Pick), trace.ids_with_role(Role::Place)];
        let mut ctx = ColoringContext {
            trace,
            index,
            dist,
            n,
            tau,
            ids,
            split: [f64::INFINITY; 2],
        };
        ctx.split = [
            seed::distance_split(&ctx, &ctx.ids[0]),
            seed::distance_split(&ctx, &ctx.ids[1]),
        ];
        Ok(ctx)
    }

    pub fn trace(&self) -> &'t Trace {
        self.trace
    }

    pub fn index(&self) -> &TraceIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn ids(&self, role: Role) -> &[ObsId] {
        match role {
            Role::Pick => &self.ids[0],
            Role::Place => &self.ids[1],
        }
    }

    /// Distance separating near pairs from far pairs within `role` (log-scale Otsu split).
    pub fn split(&self, role: Role) -> f64 {
        match role {
            Role::Pick => self.split[0],
            Role::Place => self.split[1],
        }
    }

    pub fn distance(&self, a: ObsId, b: ObsId) -> f64 {
        self.dist[a * self.n + b]
    }

    pub fn affinity(&self, a: ObsId, b: ObsId) -> f64 {
        affinity(self.distance(a, b), self.tau)
    }
}

/// Learns a structurally feasible partition with exactly `k_pick` and `k_place` clusters.
pub fn learn_partition(trace: &Trace, d: &DistanceMatrix, params: &ColoringParams) -> Result<Learned, ColoringError> {
    let ctx = ColoringContext::new(trace, d, params.tau)?;
    learn_with(&ctx, params)
}

/// [`learn_partition`] on a prepared context; `params.tau` is ignored.
pub fn learn_with(ctx: &ColoringContext<'_>, params: &ColoringParams) -> Result<Learned, ColoringError> {
    if params.k_pick == 0 || params.k_place == 0 || params.cap == 0 {
        return Err(ColoringError::InvalidInput(
            "cluster counts and cap must be positive".into(),
        ));
    }
    if params.k_place > ctx.ids(Role::Place).len() {
        return Err(ColoringError::Infeasible { stage: Stage::Place });
    }
    if params.k_pick > ctx.ids(Role::Pick).len() {
        return Err(ColoringError::Infeasible { stage: Stage::Pick });
    }
    let mut log = params.log.then(|| EventLog::new(LOG_LIMIT));
    let mut stats = SearchStats::default();
    let n = ctx.len();

    let seeds = seed_pick_greedy(ctx, ctx.ids(Role::Pick), params.k_pick);
    let mut frozen = vec![NONE; n];
    for (&o, &c) in &seeds {
        frozen[o] = c as u32;
    }
    let mut failed = None;
    let mut labels = None;
    match solve_role(ctx, params, Role::Place, &frozen, &mut stats, log.as_mut()) {
        Ok(place) => match solve_role(ctx, params, Role::Pick, &place, &mut stats, log.as_mut()) {
            Ok(both) => labels = Some(both),
            Err(e) => failed = Some((Stage::Pick, e)),
        },
        Err(e) => failed = Some((Stage::Place, e)),
    }
    let labels = match labels {
        Some(l) => l,
        None if !params.joint_fallback => {
            return Err(match failed {
                Some((_, SearchFailure::BudgetExceeded)) => ColoringError::BudgetExceeded(params.node_budget),
                Some((stage, _)) => ColoringError::Infeasible { stage },
                None => ColoringError::Infeasible { stage: Stage::Place },
            });
        }
        None => {
            stats.joint = true;
            let joint = solve_joint(ctx, params, &mut stats, log.as_mut()).map_err(|e| match e {
                SearchFailure::Infeasible => ColoringError::Infeasible {
                    stage: failed.map_or(Stage::Place, |(stage, _)| stage),
                },
                SearchFailure::BudgetExceeded => ColoringError::BudgetExceeded(params.node_budget),
            })?;
            // Stage 3 proper, against the place side of the joint solution.
            let mut place = joint.clone();
            for &o in ctx.ids(Role::Pick) {
                place[o] = NONE;
            }
            solve_role(ctx, params, Role::Pick, &place, &mut stats, log.as_mut()).unwrap_or(joint)
        }
    };
    let mut labels: Vec<usize> = labels.iter().map(|&c| c as usize).collect();
    debug_assert!(labels_feasible(ctx.trace(), &labels, Some(params.cap)));

    let mut refiner = Refiner {
        ctx,
        k: [params.k_pick, params.k_place],
        cap: params.cap,
        budget: params.node_budget,
        log: log.as_mut(),
    };
    let v_initial = refiner.score(&labels);
    let history = refiner.run(&mut labels, params.rounds);
    let v_score = refiner.score(&labels);

    // Independent re-validation of the final labeling.
    let edges = edges_from(ctx.trace(), |o| Node::new(ctx.trace().role(o), labels[o]));
    let violations = structural_violations(&edges, Some(params.cap));
    if !violations.is_empty() {
        return Err(ColoringError::InvalidInput(format!(
            "search produced an unsound graph: {}",
            violations[0]
        )));
    }
    let partition =
        Partition::from_labels(ctx.trace(), &labels).map_err(|e| ColoringError::InvalidInput(e.to_string()))?;
    Ok(Learned {
        partition,
        v_score,
        v_initial,
        history,
        stats,
        log,
    })
}

/// Colors `role` with DSATUR against the opposite colors in `frozen`. Returns all colors.
fn solve_role(
    ctx: &ColoringContext<'_>,
    params: &ColoringParams,
    role: Role,
    frozen: &[u32],
    stats: &mut SearchStats,
    mut log: Option<&mut EventLog>,
) -> Result<Vec<u32>, SearchFailure> {
    let stage = match role {
        Role::Pick => Stage::Pick,
        Role::Place => Stage::Place,
    };
    if let Some(l) = log.as_deref_mut() {
        l.push(SearchEvent::StageStart { stage });
    }
    let mut state = ColoringState::new(ctx, params.k_pick, params.k_place, params.cap);
    for o in 0..ctx.len() {
        if ctx.trace().role(o) != role && frozen[o] != NONE {
            state.freeze(o, frozen[o] as usize);
        }
    }
    let cg = conflict_graph(ctx, role, state.raw_colors(), params.cap);
    let result = match Problem::new(&[&cg]) {
        Some(problem) => {
            let mut search = Search::new(&mut state, &problem, params.node_budget, stage, log.as_deref_mut());
            let r = search.run();
            stats.nodes += search.nodes;
            stats.backtracks += search.backtracks;
            r
        }
        None => Err(SearchFailure::Infeasible),
    };
    if let (Err(e), Some(l)) = (&result, log) {
        l.push(SearchEvent::StageFailed {
            stage,
            budget_exceeded: *e == SearchFailure::BudgetExceeded,
        });
    }
    result.map(|()| state.raw_colors().to_vec())
}

/// Backtracking over both roles at once: complete up to the node budget.
fn solve_joint(
    ctx: &ColoringContext<'_>,
    params: &ColoringParams,
    stats: &mut SearchStats,
    mut log: Option<&mut EventLog>,
) -> Result<Vec<u32>, SearchFailure> {
    if let Some(l) = log.as_deref_mut() {
        l.push(SearchEvent::StageStart { stage: Stage::Joint });
    }
    let none = vec![NONE; ctx.len()];
    let pick = conflict_graph(ctx, Role::Pick, &none, params.cap);
    let place = conflict_graph(ctx, Role::Place, &none, params.cap);
    let problem = Problem::new(&[&pick, &place]).ok_or(SearchFailure::Infeasible)?;
    let mut state = ColoringState::new(ctx, params.k_pick, params.k_place, params.cap);
    let mut search = Search::new(
        &mut state,
        &problem,
        params.node_budget,
        Stage::Joint,
        log.as_deref_mut(),
    );
    let r = search.run();
    stats.nodes += search.nodes;
    stats.backtracks += search.backtracks;
    if let (Err(e), Some(l)) = (&r, log) {
        l.push(SearchEvent::StageFailed {
            stage: Stage::Joint,
            budget_exceeded: *e == SearchFailure::BudgetExceeded,
        });
    }
    r.map(|()| state.raw_colors().to_vec())
}

/// Stage 4 on its own: refines a feasible partition and returns it with its history.
pub fn refine(
    ctx: &ColoringContext<'_>,
    partition: &Partition,
    params: &ColoringParams,
) -> Result<(Partition, Vec<RefineStep>), ColoringError> {
    partition
        .check_covers(ctx.trace())
        .map_err(|e| ColoringError::InvalidInput(e.to_string()))?;
    let mut labels = vec![0; ctx.len()];
    for role in [Role::Pick, Role::Place] {
        for (&o, &c) in partition.assignment(role) {
            labels[o] = c;
        }
    }
    if !labels_feasible(ctx.trace(), &labels, Some(params.cap)) {
        return Err(ColoringError::InvalidInput(
            "partition is not structurally feasible".into(),
        ));
    }
    let mut refiner = Refiner {
        ctx,
        k: [partition.k(Role::Pick), partition.k(Role::Place)],
        cap: params.cap,
        budget: params.node_budget,
        log: None,
    };
    let history = refiner.run(&mut labels, params.rounds);
    let refined =
        Partition::from_labels(ctx.trace(), &labels).map_err(|e| ColoringError::InvalidInput(e.to_string()))?;
    Ok((refined, history))
}

/// DSATUR-style check of one tentative assignment, including conflict-graph neighbors.
pub fn check_feasible(
    state: &mut ColoringState<'_>,
    cg: &ConflictGraph,
    obs: ObsId,
    color: usize,
) -> Result<(), Infeasibility> {
    if cg.neighbors(obs).any(|n| state.color_of(n) == Some(color)) {
        return Err(Infeasibility::NeighborConflict);
    }
    let mark = state.mark();
    state.try_assign(obs, color)?;
    state.undo_to(mark);
    Ok(())
}

#[cfg(test)]
mod tests;
