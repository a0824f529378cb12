//! Alternating local refinement of a feasible partition.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::conflict::conflict_graph;
use super::dsatur::{Problem, Search};
use super::state::{ColoringState, NONE};
use super::{ColoringContext, EventLog, SearchEvent, Stage};
use crate::graph::labels_feasible;
use crate::trace::{ObsId, Role};

const IMPROVEMENT: f64 = 1e-12;
const NEIGHBORS: usize = 20;

/// One accepted local edit on the active role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Edit {
    Move { obs: ObsId, from: usize, to: usize },
    Swap { a: ObsId, b: ObsId },
    Kempe { members: Vec<ObsId>, colors: [usize; 2] },
}

/// Record of an accepted edit. `labels` is the full labeling after the edit and any
/// adopted re-coloring of the opposite role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineStep {
    pub round: usize,
    pub role: Role,
    pub edit: Edit,
    pub v_before: f64,
    pub v_after: f64,
    pub recolored: bool,
    pub labels: Vec<usize>,
}

pub(crate) struct Refiner<'a, 'c> {
    pub ctx: &'c ColoringContext<'c>,
    pub k: [usize; 2],
    pub cap: usize,
    pub budget: u64,
    pub log: Option<&'a mut EventLog>,
}

/// Sum of pairwise distances and size of every cluster of one role.
struct Clusters {
    sum: Vec<f64>,
    size: Vec<usize>,
}

fn mean(sum: f64, size: usize) -> f64 {
    if size > 1 {
        sum / (size * (size - 1)) as f64 * 2.0
    } else {
        0.0
    }
}

impl Clusters {
    fn score(&self) -> f64 {
        self.sum.iter().zip(&self.size).map(|(&s, &n)| mean(s, n)).sum()
    }
}

impl<'a, 'c> Refiner<'a, 'c> {
    fn k_of(&self, role: Role) -> usize {
        match role {
            Role::Pick => self.k[0],
            Role::Place => self.k[1],
        }
    }

    fn clusters(&self, labels: &[usize], role: Role) -> Clusters {
        let ids = self.ctx.ids(role);
        let k = self.k_of(role);
        let mut sum = vec![0.0; k];
        let mut size = vec![0; k];
        for (x, &a) in ids.iter().enumerate() {
            size[labels[a]] += 1;
            for &b in &ids[x + 1..] {
                if labels[a] == labels[b] {
                    sum[labels[a]] += self.ctx.distance(a, b);
                }
            }
        }
        Clusters { sum, size }
    }

    pub(crate) fn score(&self, labels: &[usize]) -> f64 {
        self.clusters(labels, Role::Pick).score() + self.clusters(labels, Role::Place).score()
    }

    fn feasible(&self, labels: &[usize]) -> bool {
        labels_feasible(self.ctx.trace(), labels, Some(self.cap))
    }

    /// Runs up to `rounds` alternations starting with the place role.
    pub(crate) fn run(&mut self, labels: &mut Vec<usize>, rounds: usize) -> Vec<RefineStep> {
        let mut history = Vec::new();
        let mut idle = 0;
        let mut role = Role::Place;
        for round in 0..rounds {
            let accepted = self.descend(labels, role, round, &mut history);
            idle = if accepted == 0 { idle + 1 } else { 0 };
            if idle >= 2 {
                break;
            }
            role = role.opposite();
        }
        history
    }

    fn descend(&mut self, labels: &mut Vec<usize>, role: Role, round: usize, history: &mut Vec<RefineStep>) -> usize {
        let limit = 10 * self.ctx.ids(role).len().max(1);
        let near = self.nearest(role);
        let mut accepted = 0;
        while accepted < limit {
            let v_before = self.score(labels);
            let Some((edit, next)) = self.best_edit(labels, role, &near) else {
                break;
            };
            *labels = next;
            let mut v_after = self.score(labels);
            debug_assert!(v_after < v_before);
            let recolored = match self.recolor(labels, role.opposite()) {
                Some(other) => {
                    let v = self.score(&other);
                    if v <= v_after && other != *labels {
                        *labels = other;
                        v_after = v;
                        true
                    } else {
                        false
                    }
                }
                None => false,
            };
            if let Some(log) = self.log.as_deref_mut() {
                log.push(SearchEvent::Edit {
                    round,
                    role,
                    edit: edit.clone(),
                    v_before,
                    v_after,
                });
                log.push(SearchEvent::Recolor {
                    round,
                    role: role.opposite(),
                    adopted: recolored,
                });
            }
            history.push(RefineStep {
                round,
                role,
                edit,
                v_before,
                v_after,
                recolored,
                labels: labels.clone(),
            });
            accepted += 1;
        }
        accepted
    }

    fn nearest(&self, role: Role) -> Vec<Vec<ObsId>> {
        let ids = self.ctx.ids(role);
        ids.iter()
            .map(|&a| {
                let mut others: Vec<ObsId> = ids.iter().copied().filter(|&b| b != a).collect();
                others.sort_by(|&x, &y| {
                    self.ctx
                        .distance(a, x)
                        .total_cmp(&self.ctx.distance(a, y))
                        .then(x.cmp(&y))
                });
                others.truncate(NEIGHBORS);
                others
            })
            .collect()
    }

    /// Cheapest strictly improving admissible edit, with the labeling it produces.
    fn best_edit(&self, labels: &[usize], role: Role, near: &[Vec<ObsId>]) -> Option<(Edit, Vec<usize>)> {
        let ids = self.ctx.ids(role);
        let k = self.k_of(role);
        let cl = self.clusters(labels, role);
        // dsum[x][c]: total distance from ids[x] to the members of cluster c.
        let mut dsum = vec![vec![0.0; k]; ids.len()];
        for (x, &a) in ids.iter().enumerate() {
            for &b in ids {
                if a != b {
                    dsum[x][labels[b]] += self.ctx.distance(a, b);
                }
            }
        }
        let pos = |o: ObsId| ids.binary_search(&o).unwrap();
        let mut cands: Vec<(f64, Edit)> = Vec::new();

        for (x, &v) in ids.iter().enumerate() {
            let from = labels[v];
            if cl.size[from] < 2 {
                continue;
            }
            let old_from = mean(cl.sum[from], cl.size[from]);
            let new_from = mean(cl.sum[from] - dsum[x][from], cl.size[from] - 1);
            for to in (0..k).filter(|&c| c != from) {
                let old_to = mean(cl.sum[to], cl.size[to]);
                let new_to = mean(cl.sum[to] + dsum[x][to], cl.size[to] + 1);
                let delta = new_from + new_to - old_from - old_to;
                if delta < -IMPROVEMENT {
                    cands.push((delta, Edit::Move { obs: v, from, to }));
                }
            }
        }

        let mut seen = BTreeSet::new();
        for (x, &a) in ids.iter().enumerate() {
            for &b in &near[x] {
                let (ca, cb) = (labels[a], labels[b]);
                if ca == cb || !seen.insert((a.min(b), a.max(b))) {
                    continue;
                }
                let y = pos(b);
                let dab = self.ctx.distance(a, b);
                let sa = cl.sum[ca] - dsum[x][ca] + dsum[y][ca] - dab;
                let sb = cl.sum[cb] - dsum[y][cb] + dsum[x][cb] - dab;
                let delta = mean(sa, cl.size[ca]) + mean(sb, cl.size[cb])
                    - mean(cl.sum[ca], cl.size[ca])
                    - mean(cl.sum[cb], cl.size[cb]);
                if delta < -IMPROVEMENT {
                    cands.push((
                        delta,
                        Edit::Swap {
                            a: a.min(b),
                            b: a.max(b),
                        },
                    ));
                }
            }
        }

        let colors: Vec<u32> = (0..labels.len())
            .map(|o| {
                if self.ctx.trace().role(o) == role {
                    NONE
                } else {
                    labels[o] as u32
                }
            })
            .collect();
        let cg = conflict_graph(self.ctx, role, &colors, self.cap);
        let adj = cg.adjacency();
        let mut chains = BTreeSet::new();
        for (x, &v) in ids.iter().enumerate() {
            for other in (0..k).filter(|&c| c != labels[v]) {
                let pair = [labels[v], other];
                let mut comp = vec![x];
                let mut inside = vec![false; ids.len()];
                inside[x] = true;
                let mut queue = VecDeque::from([x]);
                while let Some(p) = queue.pop_front() {
                    for &q in &adj[p] {
                        if !inside[q] && pair.contains(&labels[ids[q]]) {
                            inside[q] = true;
                            comp.push(q);
                            queue.push_back(q);
                        }
                    }
                }
                if comp.len() < 2 {
                    continue;
                }
                comp.sort_unstable();
                let members: Vec<ObsId> = comp.iter().map(|&p| ids[p]).collect();
                let key = (members.clone(), pair[0].min(pair[1]), pair[0].max(pair[1]));
                if !chains.insert(key) {
                    continue;
                }
                let mut next = labels.to_vec();
                for &m in &members {
                    next[m] = if labels[m] == pair[0] { pair[1] } else { pair[0] };
                }
                let after = self.clusters(&next, role);
                if pair.iter().any(|&c| after.size[c] == 0) {
                    continue;
                }
                let delta = after.score() - cl.score();
                if delta < -IMPROVEMENT {
                    cands.push((
                        delta,
                        Edit::Kempe {
                            members,
                            colors: [pair[0].min(pair[1]), pair[0].max(pair[1])],
                        },
                    ));
                }
            }
        }

        cands.sort_by(|a, b| a.0.total_cmp(&b.0));
        cands.into_iter().find_map(|(_, edit)| {
            let next = apply(labels, &edit);
            self.feasible(&next).then_some((edit, next))
        })
    }

    /// Re-solves `role` with DSATUR against the rest of `labels`.
    fn recolor(&mut self, labels: &[usize], role: Role) -> Option<Vec<usize>> {
        let ctx = self.ctx;
        let mut state = ColoringState::new(ctx, self.k[0], self.k[1], self.cap);
        let mut colors = vec![NONE; labels.len()];
        for o in 0..labels.len() {
            if ctx.trace().role(o) != role {
                state.freeze(o, labels[o]);
                colors[o] = labels[o] as u32;
            }
        }
        let cg = conflict_graph(ctx, role, &colors, self.cap);
        let problem = Problem::new(&[&cg])?;
        let stage = Stage::Refine;
        Search::new(&mut state, &problem, self.budget, stage, None).run().ok()?;
        let next: Vec<usize> = (0..labels.len()).map(|o| state.color_of(o).expect("colored")).collect();
        self.feasible(&next).then_some(next)
    }
}

fn apply(labels: &[usize], edit: &Edit) -> Vec<usize> {
    let mut next = labels.to_vec();
    match edit {
        Edit::Move { obs, to, .. } => next[*obs] = *to,
        Edit::Swap { a, b } => next.swap(*a, *b),
        Edit::Kempe { members, colors } => {
            for &m in members {
                next[m] = if labels[m] == colors[0] { colors[1] } else { colors[0] };
            }
        }
    }
    next
}
