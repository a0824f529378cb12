//! Same-role conflict graphs against a frozen opposite side.

use std::collections::{BTreeMap, BTreeSet};

use super::state::NONE;
use super::{ColoringContext, ColoringError};
use crate::partition::Assignment;
use crate::trace::{ActionLabel, ObsId, Role};

/// Observations of one role; an edge means the two may not share a cluster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictGraph {
    pub role: Role,
    vertices: Vec<ObsId>,
    adj: Vec<Vec<usize>>,
    must_links: Vec<(ObsId, ObsId)>,
    blocked: Vec<ObsId>,
}

impl ConflictGraph {
    pub fn vertices(&self) -> &[ObsId] {
        &self.vertices
    }

    pub fn position(&self, obs: ObsId) -> Option<usize> {
        self.vertices.binary_search(&obs).ok()
    }

    pub fn neighbors(&self, obs: ObsId) -> impl Iterator<Item = ObsId> + '_ {
        let p = self.position(obs);
        p.into_iter()
            .flat_map(move |p| self.adj[p].iter().map(|&q| self.vertices[q]))
    }

    pub(crate) fn adjacency(&self) -> &[Vec<usize>] {
        &self.adj
    }

    pub fn has_edge(&self, u: ObsId, v: ObsId) -> bool {
        match (self.position(u), self.position(v)) {
            (Some(p), Some(q)) => self.adj[p].binary_search(&q).is_ok(),
            _ => false,
        }
    }

    pub fn edges(&self) -> Vec<(ObsId, ObsId)> {
        let mut out = Vec::new();
        for (p, ns) in self.adj.iter().enumerate() {
            for &q in ns.iter().filter(|&&q| q > p) {
                out.push((self.vertices[p], self.vertices[q]));
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Pairs forced into one cluster: same predecessor cluster, same action.
    pub fn must_links(&self) -> &[(ObsId, ObsId)] {
        &self.must_links
    }

    /// Observations that cannot be placed in any cluster on their own.
    pub fn blocked(&self) -> &[ObsId] {
        &self.blocked
    }
}

/// Conflict graph of `role` against the frozen opposite clusters in `frozen`.
pub fn build_conflict_graph(
    ctx: &ColoringContext<'_>,
    role: Role,
    frozen: &Assignment,
    cap: usize,
) -> Result<ConflictGraph, ColoringError> {
    let mut colors = vec![NONE; ctx.len()];
    for (&o, &c) in frozen {
        if o >= ctx.len() || ctx.trace().role(o) != role.opposite() {
            return Err(ColoringError::InvalidInput(format!(
                "observation {o} is not a frozen {} observation",
                role.opposite()
            )));
        }
        colors[o] = c as u32;
    }
    Ok(conflict_graph(ctx, role, &colors, cap))
}

pub(crate) fn conflict_graph(ctx: &ColoringContext<'_>, role: Role, colors: &[u32], cap: usize) -> ConflictGraph {
    let trace = ctx.trace();
    let index = ctx.index();
    let vertices = trace.ids_with_role(role);
    let n = vertices.len();
    let pos: BTreeMap<ObsId, usize> = vertices.iter().enumerate().map(|(i, &o)| (o, i)).collect();
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut must: BTreeSet<(ObsId, ObsId)> = BTreeSet::new();
    let mut blocked: BTreeSet<ObsId> = BTreeSet::new();
    let add = |edges: &mut BTreeSet<(usize, usize)>, p: usize, q: usize| {
        if p != q {
            edges.insert((p.min(q), p.max(q)));
        }
    };

    // Steps arriving from the same frozen cluster.
    let mut by_src: BTreeMap<u32, Vec<(ActionLabel, ObsId)>> = BTreeMap::new();
    for &v in &vertices {
        for &(s, a) in &index.incoming[v] {
            if colors[s] != NONE {
                by_src.entry(colors[s]).or_default().push((a, v));
            }
        }
    }
    for list in by_src.values() {
        for (x, &(a, u)) in list.iter().enumerate() {
            for &(b, v) in &list[x + 1..] {
                if a == b {
                    if u != v {
                        must.insert((u.min(v), u.max(v)));
                    }
                } else if u == v {
                    blocked.insert(u);
                } else {
                    add(&mut edges, pos[&u], pos[&v]);
                }
            }
        }
    }

    // Steps leaving towards frozen clusters, and outgoing label sets for the cap.
    let mut sig: Vec<Vec<(ActionLabel, u32)>> = vec![Vec::new(); n];
    let mut labels: Vec<BTreeSet<ActionLabel>> = vec![BTreeSet::new(); n];
    for (p, &v) in vertices.iter().enumerate() {
        for &(a, t) in &index.outgoing[v] {
            labels[p].insert(a);
            if colors[t] != NONE {
                sig[p].push((a, colors[t]));
            }
        }
        sig[p].sort_unstable();
        sig[p].dedup();
        if labels[p].len() > cap || clash(&sig[p], &sig[p]) {
            blocked.insert(v);
        }
    }
    for p in 0..n {
        for q in p + 1..n {
            if clash(&sig[p], &sig[q]) || labels[p].union(&labels[q]).count() > cap {
                add(&mut edges, p, q);
            }
        }
    }

    let mut adj = vec![Vec::new(); n];
    for &(p, q) in &edges {
        adj[p].push(q);
        adj[q].push(p);
    }
    for ns in &mut adj {
        ns.sort_unstable();
    }
    ConflictGraph {
        role,
        vertices,
        adj,
        must_links: must.into_iter().collect(),
        blocked: blocked.into_iter().collect(),
    }
}

/// Two outgoing signatures clash if one action leads to two clusters or two actions
/// lead to one cluster.
fn clash(a: &[(ActionLabel, u32)], b: &[(ActionLabel, u32)]) -> bool {
    a.iter().any(|&(x, cx)| b.iter().any(|&(y, cy)| (x == y) != (cx == cy)))
}
