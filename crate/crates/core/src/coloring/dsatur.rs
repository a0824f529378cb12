//! DSATUR with feasibility checks and chronological backtracking.

use std::cmp::Reverse;

use super::conflict::ConflictGraph;
use super::state::{ColoringState, Infeasibility};
use super::{EventLog, SearchEvent, Stage};
use crate::otdist::affinity;
use crate::partition::Assignment;
use crate::trace::{ObsId, Role};

/// How a complete search ended without a coloring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchFailure {
    Infeasible,
    BudgetExceeded,
}

/// Vertices to color: must-link groups of observations and the conflicts between them.
#[derive(Debug, Clone)]
pub(crate) struct Problem {
    groups: Vec<Vec<ObsId>>,
    roles: Vec<Role>,
    adj: Vec<Vec<usize>>,
}

impl Problem {
    /// Contracts must-links of every graph into groups. `None` if some group is
    /// unsatisfiable on its own.
    pub(crate) fn new(graphs: &[&ConflictGraph]) -> Option<Problem> {
        let mut groups = Vec::new();
        let mut roles = Vec::new();
        let mut adj = Vec::new();
        for cg in graphs {
            if !cg.blocked().is_empty() {
                return None;
            }
            let verts = cg.vertices();
            let mut parent: Vec<usize> = (0..verts.len()).collect();
            fn find(p: &mut [usize], x: usize) -> usize {
                let mut r = x;
                while p[r] != r {
                    r = p[r];
                }
                let mut y = x;
                while p[y] != r {
                    let next = p[y];
                    p[y] = r;
                    y = next;
                }
                r
            }
            for &(u, v) in cg.must_links() {
                let (a, b) = (find(&mut parent, cg.position(u)?), find(&mut parent, cg.position(v)?));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
            // Group ids in order of smallest member; vertices are sorted so roots come first.
            let base = groups.len();
            let mut gid = vec![usize::MAX; verts.len()];
            for p in 0..verts.len() {
                let r = find(&mut parent, p);
                if gid[r] == usize::MAX {
                    gid[r] = groups.len();
                    groups.push(Vec::new());
                    roles.push(cg.role);
                    adj.push(Vec::new());
                }
                gid[p] = gid[r];
                groups[gid[p]].push(verts[p]);
            }
            for (p, ns) in cg.adjacency().iter().enumerate() {
                for &q in ns {
                    let (a, b) = (gid[p], gid[q]);
                    if a == b {
                        return None;
                    }
                    adj[a].push(b);
                }
            }
            for list in &mut adj[base..] {
                list.sort_unstable();
                list.dedup();
            }
        }
        Some(Problem { groups, roles, adj })
    }

    fn count(&self, role: Role) -> usize {
        self.roles.iter().filter(|&&r| r == role).count()
    }

    /// Size of a greedily grown clique among groups of `role`: a lower bound on colors.
    fn clique_bound(&self, role: Role) -> usize {
        let mut order: Vec<usize> = (0..self.groups.len()).filter(|&g| self.roles[g] == role).collect();
        order.sort_by_key(|&g| (Reverse(self.adj[g].len()), g));
        let mut best = usize::from(!order.is_empty());
        for &start in order.iter().take(32) {
            let mut clique = vec![start];
            let mut cands: Vec<usize> = self.adj[start].clone();
            cands.sort_by_key(|&g| (Reverse(self.adj[g].len()), g));
            for c in cands {
                if clique.iter().all(|&m| self.adj[c].binary_search(&m).is_ok()) {
                    clique.push(c);
                }
            }
            best = best.max(clique.len());
        }
        best
    }
}

pub(crate) struct Search<'a, 'c> {
    state: &'a mut ColoringState<'c>,
    problem: &'a Problem,
    color: Vec<Option<usize>>,
    sat: Vec<Vec<u32>>,
    remaining: [usize; 2],
    pub(crate) nodes: u64,
    pub(crate) backtracks: u64,
    budget: u64,
    stage: Stage,
    log: Option<&'a mut EventLog>,
}

enum Outcome {
    Found,
    Exhausted,
    Budget,
}

fn slot(role: Role) -> usize {
    match role {
        Role::Pick => 0,
        Role::Place => 1,
    }
}

impl<'a, 'c> Search<'a, 'c> {
    pub(crate) fn new(
        state: &'a mut ColoringState<'c>,
        problem: &'a Problem,
        budget: u64,
        stage: Stage,
        log: Option<&'a mut EventLog>,
    ) -> Self {
        let sat = problem.roles.iter().map(|&r| vec![0; state.k(r)]).collect();
        Search {
            color: vec![None; problem.groups.len()],
            sat,
            remaining: [problem.count(Role::Pick), problem.count(Role::Place)],
            state,
            problem,
            nodes: 0,
            backtracks: 0,
            budget,
            stage,
            log,
        }
    }

    /// Colors every group, leaving the assignment in the state on success.
    pub(crate) fn run(&mut self) -> Result<(), SearchFailure> {
        for role in [Role::Pick, Role::Place] {
            if self.remaining[slot(role)] == 0 {
                continue;
            }
            let k = self.state.k(role);
            if self.remaining[slot(role)] + self.state.used(role) < k || self.problem.clique_bound(role) > k {
                return Err(SearchFailure::Infeasible);
            }
        }
        match self.descend() {
            Outcome::Found => Ok(()),
            Outcome::Exhausted => Err(SearchFailure::Infeasible),
            Outcome::Budget => Err(SearchFailure::BudgetExceeded),
        }
    }

    fn emit(&mut self, event: impl FnOnce() -> SearchEvent) {
        if let Some(log) = self.log.as_deref_mut() {
            log.push(event());
        }
    }

    fn next_group(&self) -> Option<usize> {
        (0..self.problem.groups.len())
            .filter(|&g| self.color[g].is_none())
            .max_by_key(|&g| {
                let sat = self.sat[g].iter().filter(|&&c| c > 0).count();
                (sat, self.problem.adj[g].len(), Reverse(self.problem.groups[g][0]))
            })
    }

    fn assign(&mut self, g: usize, c: usize) -> Result<usize, Infeasibility> {
        if self.sat[g][c] > 0 {
            return Err(Infeasibility::NeighborConflict);
        }
        let mark = self.state.mark();
        for &o in &self.problem.groups[g] {
            if let Err(e) = self.state.try_assign(o, c) {
                self.state.undo_to(mark);
                return Err(e);
            }
        }
        self.color[g] = Some(c);
        for &n in &self.problem.adj[g] {
            self.sat[n][c] += 1;
        }
        self.remaining[slot(self.problem.roles[g])] -= 1;
        Ok(mark)
    }

    fn unassign(&mut self, g: usize, mark: usize) {
        let c = self.color[g].take().expect("group not colored");
        for &n in &self.problem.adj[g] {
            self.sat[n][c] -= 1;
        }
        self.remaining[slot(self.problem.roles[g])] += 1;
        self.state.undo_to(mark);
    }

    fn affinity(&self, g: usize, c: usize) -> f64 {
        let role = self.problem.roles[g];
        let members = self.state.members(role, c);
        let ctx = self.state.context();
        let group = &self.problem.groups[g];
        let total: f64 = group
            .iter()
            .flat_map(|&a| members.iter().map(move |&b| ctx.affinity(a, b)))
            .sum();
        total / (group.len() * members.len()) as f64
    }

    /// Feasible existing colors by decreasing affinity, then a fresh color if one is left.
    /// The fresh color goes first when even the best existing color is visually far.
    fn candidates(&mut self, g: usize) -> Vec<usize> {
        let role = self.problem.roles[g];
        let used = self.state.used(role);
        let mut scored = Vec::new();
        for c in 0..used {
            match self.assign(g, c) {
                Ok(mark) => {
                    self.unassign(g, mark);
                    scored.push((self.affinity(g, c), c));
                }
                Err(reason) => {
                    let obs = self.problem.groups[g][0];
                    let stage = self.stage;
                    self.emit(|| SearchEvent::Reject {
                        stage,
                        obs,
                        color: c,
                        reason,
                    });
                }
            }
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let ctx = self.state.context();
        let far = scored
            .first()
            .is_none_or(|&(a, _)| a < affinity(ctx.split(role), ctx.tau()));
        let mut out: Vec<usize> = scored.into_iter().map(|(_, c)| c).collect();
        if used < self.state.k(role) {
            if far {
                out.insert(0, used);
            } else {
                out.push(used);
            }
        }
        out
    }

    fn counts_ok(&self) -> bool {
        [Role::Pick, Role::Place]
            .iter()
            .all(|&r| self.remaining[slot(r)] + self.state.used(r) >= self.state.k(r) || self.problem.count(r) == 0)
    }

    fn descend(&mut self) -> Outcome {
        let Some(g) = self.next_group() else {
            return Outcome::Found;
        };
        for c in self.candidates(g) {
            if self.nodes >= self.budget {
                return Outcome::Budget;
            }
            let mark = match self.assign(g, c) {
                Ok(mark) => mark,
                Err(reason) => {
                    let (stage, obs) = (self.stage, self.problem.groups[g][0]);
                    self.emit(|| SearchEvent::Reject {
                        stage,
                        obs,
                        color: c,
                        reason,
                    });
                    continue;
                }
            };
            self.nodes += 1;
            let (stage, obs, size) = (self.stage, self.problem.groups[g][0], self.problem.groups[g].len());
            self.emit(|| SearchEvent::Decide {
                stage,
                obs,
                size,
                color: c,
            });
            if self.counts_ok() {
                match self.descend() {
                    Outcome::Found => return Outcome::Found,
                    Outcome::Budget => return Outcome::Budget,
                    Outcome::Exhausted => {}
                }
            }
            self.unassign(g, mark);
            self.backtracks += 1;
            self.emit(|| SearchEvent::Backtrack { stage, obs });
        }
        Outcome::Exhausted
    }
}

/// Colors the vertices of `cg` on top of `state` with at most `state.k(cg.role)` colors.
///
/// The opposite role must already be frozen in `state`. Returns the assignment of the
/// colored role; the state keeps it on success.
pub fn dsatur_color(
    state: &mut ColoringState<'_>,
    cg: &ConflictGraph,
    budget: u64,
    log: Option<&mut EventLog>,
) -> Result<Assignment, SearchFailure> {
    let problem = Problem::new(&[cg]).ok_or(SearchFailure::Infeasible)?;
    let stage = match cg.role {
        Role::Pick => Stage::Pick,
        Role::Place => Stage::Place,
    };
    let mut search = Search::new(state, &problem, budget, stage, log);
    search.run()?;
    Ok(cg
        .vertices()
        .iter()
        .map(|&o| (o, state.color_of(o).expect("colored")))
        .collect())
}
