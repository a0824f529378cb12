//! Abstract graph induction, structural validation, planning, and evaluation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envsim::GroundTruthEnv;
use crate::partition::{Partition, PartitionError};
use crate::trace::{ActionLabel, ObsId, Role, Trace};

/// A cluster of one role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Node {
    pub role: Role,
    pub cluster: usize,
}

impl Node {
    pub fn new(role: Role, cluster: usize) -> Self {
        Node { role, cluster }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.role, self.cluster)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: Node,
    pub action: ActionLabel,
    pub dst: Node,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NotBipartite {
        edge: Edge,
    },
    ExactlyOne {
        src: Node,
        action: ActionLabel,
        dsts: [Node; 2],
    },
    PairUniqueness {
        src: Node,
        dst: Node,
        actions: [ActionLabel; 2],
    },
    Cap {
        node: Node,
        labels: usize,
        cap: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotBipartite { edge } => {
                write!(
                    f,
                    "edge {} -{}-> {} does not cross roles",
                    edge.src, edge.action, edge.dst
                )
            }
            Violation::ExactlyOne { src, action, dsts } => {
                write!(f, "{src} -{action}-> both {} and {}", dsts[0], dsts[1])
            }
            Violation::PairUniqueness { src, dst, actions } => {
                write!(f, "{src} -> {dst} labeled both {} and {}", actions[0], actions[1])
            }
            Violation::Cap { node, labels, cap } => write!(f, "{node} has {labels} outgoing labels, cap {cap}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("partition is not structurally feasible: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    StructuralViolation(Vec<Violation>),
    #[error("unknown node {0}")]
    UnknownNode(Node),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Deduplicated, sorted edges `(node(src), action, node(dst))` over all trace steps.
pub fn edges_from(trace: &Trace, node_of: impl Fn(ObsId) -> Node) -> Vec<Edge> {
    let mut edges: Vec<Edge> = trace
        .steps()
        .iter()
        .map(|s| Edge {
            src: node_of(s.src),
            action: s.action,
            dst: node_of(s.dst),
        })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// Checks bipartiteness, one successor per (node, action), one label per ordered
/// node pair, and the outgoing label cap. `edges` must be sorted and deduplicated.
pub fn structural_violations(edges: &[Edge], cap: Option<usize>) -> Vec<Violation> {
    let mut out = Vec::new();
    for e in edges {
        if e.action.role != e.src.role || e.dst.role != e.src.role.opposite() {
            out.push(Violation::NotBipartite { edge: *e });
        }
    }
    // Sorted by (src, action, dst): a successor conflict shows up as adjacent entries.
    for w in edges.windows(2) {
        if w[0].src == w[1].src && w[0].action == w[1].action {
            out.push(Violation::ExactlyOne {
                src: w[0].src,
                action: w[0].action,
                dsts: [w[0].dst, w[1].dst],
            });
        }
    }
    let mut by_pair: Vec<(Node, Node, ActionLabel)> = edges.iter().map(|e| (e.src, e.dst, e.action)).collect();
    by_pair.sort_unstable();
    for w in by_pair.windows(2) {
        if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
            out.push(Violation::PairUniqueness {
                src: w[0].0,
                dst: w[0].1,
                actions: [w[0].2, w[1].2],
            });
        }
    }
    if let Some(cap) = cap {
        let mut start = 0;
        while start < edges.len() {
            let src = edges[start].src;
            let mut end = start;
            let mut labels = 0;
            let mut last = None;
            while end < edges.len() && edges[end].src == src {
                if last != Some(edges[end].action) {
                    labels += 1;
                    last = Some(edges[end].action);
                }
                end += 1;
            }
            if labels > cap {
                out.push(Violation::Cap { node: src, labels, cap });
            }
            start = end;
        }
    }
    out
}

/// True iff the graph induced by `labels` (cluster per observation, within its trace role) is sound.
pub fn labels_feasible(trace: &Trace, labels: &[usize], cap: Option<usize>) -> bool {
    let edges = edges_from(trace, |o| Node::new(trace.role(o), labels[o]));
    structural_violations(&edges, cap).is_empty()
}

/// Bipartite action-labeled graph over the clusters of a partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractGraph {
    pub k_pick: usize,
    pub k_place: usize,
    pub edges: BTreeSet<Edge>,
    /// Member observations per pick cluster.
    pub pick_members: Vec<Vec<ObsId>>,
    pub place_members: Vec<Vec<ObsId>>,
}

impl AbstractGraph {
    /// All nodes, pick clusters first.
    pub fn nodes(&self) -> Vec<Node> {
        (0..self.k_pick)
            .map(|c| Node::new(Role::Pick, c))
            .chain((0..self.k_place).map(|c| Node::new(Role::Place, c)))
            .collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.k_pick + self.k_place
    }

    pub fn contains(&self, n: Node) -> bool {
        n.cluster < self.k(n.role)
    }

    pub fn k(&self, role: Role) -> usize {
        match role {
            Role::Pick => self.k_pick,
            Role::Place => self.k_place,
        }
    }

    pub fn members(&self, n: Node) -> &[ObsId] {
        match n.role {
            Role::Pick => &self.pick_members[n.cluster],
            Role::Place => &self.place_members[n.cluster],
        }
    }

    /// Outgoing `(action, dst)` pairs per node, ordered by action role, action index, then dst.
    pub fn adjacency(&self) -> BTreeMap<Node, Vec<(ActionLabel, Node)>> {
        let mut adj: BTreeMap<Node, Vec<(ActionLabel, Node)>> =
            self.nodes().into_iter().map(|n| (n, Vec::new())).collect();
        for e in &self.edges {
            adj.entry(e.src).or_default().push((e.action, e.dst));
        }
        for v in adj.values_mut() {
            v.sort();
        }
        adj
    }

    pub fn violations(&self, cap: Option<usize>) -> Vec<Violation> {
        let edges: Vec<Edge> = self.edges.iter().copied().collect();
        structural_violations(&edges, cap)
    }

    /// Number of weakly connected components.
    pub fn weak_components(&self) -> usize {
        let nodes = self.nodes();
        let index: BTreeMap<Node, usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        let mut parent: Vec<usize> = (0..nodes.len()).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            p[x] = r;
            r
        }
        for e in &self.edges {
            let (a, b) = (find(&mut parent, index[&e.src]), find(&mut parent, index[&e.dst]));
            parent[a] = b;
        }
        (0..nodes.len()).filter(|&i| find(&mut parent, i) == i).count()
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph abstraction {\n  rankdir=LR;\n");
        for n in self.nodes() {
            let members: Vec<String> = self.members(n).iter().map(|o| o.to_string()).collect();
            let shape = match n.role {
                Role::Pick => "box",
                Role::Place => "ellipse",
            };
            s.push_str(&format!(
                "  \"{n}\" [shape={shape}, role={}, label=\"{n}\\n{{{}}}\"];\n",
                n.role,
                members.join(",")
            ));
        }
        for e in &self.edges {
            s.push_str(&format!("  \"{}\" -> \"{}\" [label=\"{}\"];\n", e.src, e.dst, e.action));
        }
        s.push_str("}\n");
        s
    }
}

fn graph_parts(partition: &Partition, trace: &Trace) -> Result<(AbstractGraph, Vec<Edge>), GraphError> {
    partition.check_covers(trace)?;
    let node_of = |o: ObsId| {
        let (role, c) = partition.cluster_of(o).expect("coverage checked");
        Node::new(role, c)
    };
    let edges = edges_from(trace, node_of);
    let g = AbstractGraph {
        k_pick: partition.k_pick,
        k_place: partition.k_place,
        edges: edges.iter().copied().collect(),
        pick_members: partition.members(Role::Pick),
        place_members: partition.members(Role::Place),
    };
    Ok((g, edges))
}

/// Induces the abstract graph, rejecting partitions whose graph breaks a structural rule.
pub fn induce_graph(partition: &Partition, trace: &Trace) -> Result<AbstractGraph, GraphError> {
    induce_graph_capped(partition, trace, None)
}

pub fn induce_graph_capped(
    partition: &Partition,
    trace: &Trace,
    cap: Option<usize>,
) -> Result<AbstractGraph, GraphError> {
    let (g, edges) = graph_parts(partition, trace)?;
    let violations = structural_violations(&edges, cap);
    if violations.is_empty() {
        Ok(g)
    } else {
        Err(GraphError::StructuralViolation(violations))
    }
}

/// Induces the graph and reports violations instead of rejecting.
pub fn induce_graph_unchecked(
    partition: &Partition,
    trace: &Trace,
    cap: Option<usize>,
) -> Result<(AbstractGraph, Vec<Violation>), GraphError> {
    let (g, edges) = graph_parts(partition, trace)?;
    let violations = structural_violations(&edges, cap);
    Ok((g, violations))
}

/// Ground-truth abstract graph of an environment: one node per class.
/// Returns the graph and the states behind each node.
pub fn ground_truth_graph(env: &GroundTruthEnv) -> (AbstractGraph, BTreeMap<Node, Vec<usize>>) {
    let mut node_of_class = Vec::with_capacity(env.num_classes());
    let mut counts = [0usize; 2];
    for c in 0..env.num_classes() {
        let role = env.class_role(c);
        let slot = role as usize;
        node_of_class.push(Node::new(role, counts[slot]));
        counts[slot] += 1;
    }
    let edges = env
        .class_graph()
        .into_iter()
        .map(|(s, a, d)| Edge {
            src: node_of_class[s],
            action: a,
            dst: node_of_class[d],
        })
        .collect();
    let mut states: BTreeMap<Node, Vec<usize>> = BTreeMap::new();
    for s in 0..env.num_states() {
        states.entry(node_of_class[env.class_of(s)]).or_default().push(s);
    }
    let g = AbstractGraph {
        k_pick: counts[0],
        k_place: counts[1],
        edges,
        pick_members: vec![Vec::new(); counts[0]],
        place_members: vec![Vec::new(); counts[1]],
    };
    (g, states)
}

/// Ground-truth states of each node's member observations.
pub fn node_states(g: &AbstractGraph, obs_states: &[usize]) -> BTreeMap<Node, Vec<usize>> {
    g.nodes()
        .into_iter()
        .map(|n| (n, g.members(n).iter().map(|&o| obs_states[o]).collect()))
        .collect()
}

/// Cap on the number of shortest label sequences returned by [`plan_bfs`].
pub const BFS_PATH_LIMIT: usize = 1000;

/// All shortest label sequences from `start` to `goal` (up to [`BFS_PATH_LIMIT`]).
pub fn plan_bfs(g: &AbstractGraph, start: Node, goal: Node) -> Result<Vec<Vec<ActionLabel>>, GraphError> {
    plan_bfs_limited(g, start, goal, BFS_PATH_LIMIT)
}

pub fn plan_bfs_limited(
    g: &AbstractGraph,
    start: Node,
    goal: Node,
    limit: usize,
) -> Result<Vec<Vec<ActionLabel>>, GraphError> {
    for n in [start, goal] {
        if !g.contains(n) {
            return Err(GraphError::UnknownNode(n));
        }
    }
    let adj = g.adjacency();
    // Distance to goal over reversed edges, so the forward enumeration only follows shortest moves.
    let mut rev: BTreeMap<Node, Vec<Node>> = BTreeMap::new();
    for e in &g.edges {
        rev.entry(e.dst).or_default().push(e.src);
    }
    let mut dist: BTreeMap<Node, usize> = BTreeMap::new();
    dist.insert(goal, 0);
    let mut queue = VecDeque::from([goal]);
    while let Some(n) = queue.pop_front() {
        let dn = dist[&n];
        for &p in rev.get(&n).into_iter().flatten() {
            if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(p) {
                e.insert(dn + 1);
                queue.push_back(p);
            }
        }
    }
    let mut out = Vec::new();
    if !dist.contains_key(&start) {
        return Ok(out);
    }
    let mut path = Vec::new();
    fn walk(
        n: Node,
        goal: Node,
        adj: &BTreeMap<Node, Vec<(ActionLabel, Node)>>,
        dist: &BTreeMap<Node, usize>,
        path: &mut Vec<ActionLabel>,
        out: &mut Vec<Vec<ActionLabel>>,
        limit: usize,
    ) {
        if out.len() >= limit {
            return;
        }
        if n == goal {
            out.push(path.clone());
            return;
        }
        let dn = dist[&n];
        for &(a, m) in &adj[&n] {
            if dist.get(&m) == Some(&(dn - 1)) {
                path.push(a);
                walk(m, goal, adj, dist, path, out, limit);
                path.pop();
            }
        }
    }
    walk(start, goal, &adj, &dist, &mut path, &mut out, limit);
    Ok(out)
}

/// First path found by depth-first search with at most `max_len` steps.
pub fn plan_dfs(
    g: &AbstractGraph,
    start: Node,
    goal: Node,
    max_len: usize,
) -> Result<Option<Vec<ActionLabel>>, GraphError> {
    plan_dfs_with(g, start, goal, max_len, usize::MAX, (), |_, _| Some(()), |_, _| true)
}

/// Depth-first search carrying a user state along the path. `step` advances the
/// state across an edge (returning `None` prunes the branch) and `accept` decides
/// whether reaching `goal` with a state counts. At most `expansions` edges are tried.
#[allow(clippy::too_many_arguments)]
pub fn plan_dfs_with<S: Clone>(
    g: &AbstractGraph,
    start: Node,
    goal: Node,
    max_len: usize,
    expansions: usize,
    init: S,
    mut step: impl FnMut(&S, ActionLabel) -> Option<S>,
    mut accept: impl FnMut(&S, &[ActionLabel]) -> bool,
) -> Result<Option<Vec<ActionLabel>>, GraphError> {
    for n in [start, goal] {
        if !g.contains(n) {
            return Err(GraphError::UnknownNode(n));
        }
    }
    if start == goal && accept(&init, &[]) {
        return Ok(Some(Vec::new()));
    }
    let adj = g.adjacency();
    let mut on_path: BTreeSet<Node> = BTreeSet::from([start]);
    let mut path: Vec<ActionLabel> = Vec::new();
    // Each frame: node, carried state, index of the next child to try.
    let mut stack: Vec<(Node, S, usize)> = vec![(start, init, 0)];
    let mut budget = expansions;
    while let Some((node, state, next)) = stack.last_mut() {
        let children = &adj[node];
        if *next >= children.len() || path.len() >= max_len || budget == 0 {
            on_path.remove(node);
            stack.pop();
            path.pop();
            if budget == 0 {
                return Ok(None);
            }
            continue;
        }
        let (a, m) = children[*next];
        *next += 1;
        budget -= 1;
        if on_path.contains(&m) {
            continue;
        }
        let Some(child_state) = step(state, a) else {
            continue;
        };
        path.push(a);
        if m == goal {
            if accept(&child_state, &path) {
                return Ok(Some(path));
            }
            path.pop();
            continue;
        }
        on_path.insert(m);
        stack.push((m, child_state, 0));
    }
    Ok(None)
}

/// True iff every action applies in sequence from `start_state`.
pub fn validate_plan(env: &GroundTruthEnv, start_state: usize, actions: &[ActionLabel]) -> bool {
    execute_plan(env, start_state, actions).is_some()
}

/// Final state after applying `actions`, or `None` if some step is undefined.
pub fn execute_plan(env: &GroundTruthEnv, start_state: usize, actions: &[ActionLabel]) -> Option<usize> {
    actions.iter().try_fold(start_state, |s, &a| env.step(s, a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub opt_path_pct: f64,
    pub any_path_pct: f64,
    pub transition_pct: f64,
    pub v_score: f64,
}

/// Edge budget for one depth-first fallback search.
const DFS_EXPANSIONS: usize = 200_000;

/// Planning and edge-validity metrics of `g` against the ground-truth environment.
///
/// `states` lists the ground-truth states behind each node. Start and goal nodes are
/// sampled uniformly among distinct nodes; concrete start and goal states are drawn
/// uniformly from the nodes' members. A plan succeeds if it executes and ends in the
/// goal state's class.
pub fn evaluate(
    g: &AbstractGraph,
    env: &GroundTruthEnv,
    states: &BTreeMap<Node, Vec<usize>>,
    n_pairs: usize,
    seed: u64,
    v_score: f64,
) -> Result<Metrics, GraphError> {
    if n_pairs == 0 {
        return Err(GraphError::InvalidInput("n_pairs must be at least 1".into()));
    }
    let nodes: Vec<Node> = g
        .nodes()
        .into_iter()
        .filter(|n| states.get(n).is_some_and(|s| !s.is_empty()))
        .collect();
    if nodes.len() < 2 {
        return Err(GraphError::InvalidInput("need at least two populated nodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(Node, usize, Node, usize)> = (0..n_pairs)
        .map(|_| {
            let i = rng.gen_range(0..nodes.len());
            let mut j = rng.gen_range(0..nodes.len() - 1);
            if j >= i {
                j += 1;
            }
            let (s, t) = (nodes[i], nodes[j]);
            let ss = &states[&s];
            let ts = &states[&t];
            (s, ss[rng.gen_range(0..ss.len())], t, ts[rng.gen_range(0..ts.len())])
        })
        .collect();
    let max_len = 4 * g.num_nodes();
    let outcomes: Vec<(bool, bool)> = pairs
        .par_iter()
        .map(|&(s, s_state, t, t_state)| {
            let goal_class = env.class_of(t_state);
            let reaches =
                |plan: &[ActionLabel]| execute_plan(env, s_state, plan).is_some_and(|f| env.class_of(f) == goal_class);
            let shortest = plan_bfs(g, s, t).expect("sampled nodes exist");
            if shortest.iter().any(|p| reaches(p)) {
                return (true, true);
            }
            let any = plan_dfs_with(
                g,
                s,
                t,
                max_len,
                DFS_EXPANSIONS,
                s_state,
                |&st, a| env.step(st, a),
                |&st, _| env.class_of(st) == goal_class,
            )
            .expect("sampled nodes exist")
            .is_some();
            (false, any)
        })
        .collect();
    let opt = outcomes.iter().filter(|o| o.0).count();
    let any = outcomes.iter().filter(|o| o.1).count();

    let valid_edges = g
        .edges
        .iter()
        .filter(|e| {
            let dst_classes: BTreeSet<usize> = states
                .get(&e.dst)
                .into_iter()
                .flatten()
                .map(|&s| env.class_of(s))
                .collect();
            let src_states = states.get(&e.src).map(Vec::as_slice).unwrap_or(&[]);
            !src_states.is_empty()
                && src_states.iter().all(|&s| {
                    env.step(s, e.action)
                        .is_some_and(|n| dst_classes.contains(&env.class_of(n)))
                })
        })
        .count();
    let transition_pct = if g.edges.is_empty() {
        100.0
    } else {
        100.0 * valid_edges as f64 / g.edges.len() as f64
    };
    Ok(Metrics {
        opt_path_pct: 100.0 * opt as f64 / n_pairs as f64,
        any_path_pct: 100.0 * any as f64 / n_pairs as f64,
        transition_pct,
        v_score,
    })
}

pub const METRICS_HEADER: &str = "method,opt_path_pct,any_path_pct,transition_pct,v_score";

/// Metrics rows in table column order, one per method.
pub fn write_metrics_csv<W: Write>(rows: &[(String, Metrics)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for (method, m) in rows {
        writeln!(
            out,
            "{method},{:.2},{:.2},{:.2},{:.6}",
            m.opt_path_pct, m.any_path_pct, m.transition_pct, m.v_score
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::{build_env, sample_trace, EnvKind, EnvSpec};
    use crate::trace::{assign_roles, Step};

    fn pick(c: usize) -> Node {
        Node::new(Role::Pick, c)
    }

    fn place(c: usize) -> Node {
        Node::new(Role::Place, c)
    }

    fn graph(k_pick: usize, k_place: usize, edges: &[(Node, ActionLabel, Node)]) -> AbstractGraph {
        AbstractGraph {
            k_pick,
            k_place,
            edges: edges
                .iter()
                .map(|&(src, action, dst)| Edge { src, action, dst })
                .collect(),
            pick_members: vec![Vec::new(); k_pick],
            place_members: vec![Vec::new(); k_place],
        }
    }

    #[test]
    fn ground_truth_partition_reproduces_class_graph() {
        let env = build_env(&EnvSpec::new(EnvKind::FruitHom, 0)).unwrap();
        let s = sample_trace(&env, 30, 1).unwrap();
        let classes = s.classes(&env);
        let p = Partition::from_labels(&s.trace, &classes).unwrap();
        let g = induce_graph(&p, &s.trace).unwrap();
        // Map learned nodes back to classes through any member.
        let class_of_node = |n: Node| classes[g.members(n)[0]];
        let induced: BTreeSet<(usize, ActionLabel, usize)> = g
            .edges
            .iter()
            .map(|e| (class_of_node(e.src), e.action, class_of_node(e.dst)))
            .collect();
        let full = env.class_graph();
        assert!(induced.is_subset(&full));
        let replayed: BTreeSet<(usize, ActionLabel, usize)> = s
            .trace
            .steps()
            .iter()
            .map(|st| (classes[st.src], st.action, classes[st.dst]))
            .collect();
        assert_eq!(induced, replayed);
        // A 30-step walk over six classes sees every edge class pair it traverses; all 12 exist.
        assert_eq!(full.len(), 12);
    }

    #[test]
    fn merged_place_classes_violate_exactly_one() {
        // Two place observations leave by the same action to different pick clusters.
        let t = assign_roles(&[
            Step::new(0, ActionLabel::pick(0), 1),
            Step::new(1, ActionLabel::place(1), 2),
            Step::new(3, ActionLabel::pick(1), 4),
            Step::new(4, ActionLabel::place(1), 5),
        ])
        .unwrap();
        let p = Partition::from_labels(&t, &[0, 0, 1, 2, 0, 3]).unwrap();
        match induce_graph(&p, &t) {
            Err(GraphError::StructuralViolation(v)) => {
                assert!(v.iter().any(|x| matches!(x, Violation::ExactlyOne { .. })))
            }
            other => panic!("expected violation, got {other:?}"),
        }
    }

    #[test]
    fn empty_graph_has_no_edges() {
        let g = graph(0, 0, &[]);
        assert!(g.edges.is_empty());
        assert!(g.violations(Some(1)).is_empty());
    }

    #[test]
    fn cap_violation_detected() {
        let g = graph(
            1,
            3,
            &[
                (pick(0), ActionLabel::pick(0), place(0)),
                (pick(0), ActionLabel::pick(1), place(1)),
                (pick(0), ActionLabel::pick(2), place(2)),
            ],
        );
        assert!(g.violations(Some(3)).is_empty());
        assert_eq!(
            g.violations(Some(2)),
            vec![Violation::Cap {
                node: pick(0),
                labels: 3,
                cap: 2
            }]
        );
    }

    #[test]
    fn bfs_examples() {
        let g = graph(
            2,
            1,
            &[
                (pick(0), ActionLabel::pick(0), place(0)),
                (place(0), ActionLabel::place(1), pick(1)),
            ],
        );
        assert_eq!(plan_bfs(&g, pick(0), pick(0)).unwrap(), vec![Vec::<ActionLabel>::new()]);
        assert_eq!(
            plan_bfs(&g, pick(0), pick(1)).unwrap(),
            vec![vec![ActionLabel::pick(0), ActionLabel::place(1)]]
        );
        assert!(plan_bfs(&g, pick(1), pick(0)).unwrap().is_empty());
        assert!(matches!(
            plan_bfs(&g, pick(5), pick(0)),
            Err(GraphError::UnknownNode(_))
        ));
    }

    #[test]
    fn bfs_enumerates_every_shortest_sequence() {
        let g = graph(
            2,
            2,
            &[
                (pick(0), ActionLabel::pick(0), place(0)),
                (pick(0), ActionLabel::pick(1), place(1)),
                (place(0), ActionLabel::place(0), pick(1)),
                (place(1), ActionLabel::place(1), pick(1)),
            ],
        );
        let paths = plan_bfs(&g, pick(0), pick(1)).unwrap();
        assert_eq!(paths.len(), 2);
    }

    #[test]
    fn dfs_examples() {
        let chain = graph(
            3,
            2,
            &[
                (pick(0), ActionLabel::pick(0), place(0)),
                (place(0), ActionLabel::place(0), pick(1)),
                (pick(1), ActionLabel::pick(1), place(1)),
                (place(1), ActionLabel::place(1), pick(2)),
            ],
        );
        assert_eq!(plan_dfs(&chain, pick(0), pick(0), 3).unwrap(), Some(vec![]));
        assert_eq!(plan_dfs(&chain, pick(2), pick(0), 10).unwrap(), None);
        assert_eq!(plan_dfs(&chain, pick(0), pick(2), 3).unwrap(), None);
        assert_eq!(plan_dfs(&chain, pick(0), pick(2), 4).unwrap().map(|p| p.len()), Some(4));
    }

    #[test]
    fn validate_plan_examples() {
        let env = build_env(&EnvSpec::new(EnvKind::FruitHom, 0)).unwrap();
        let s0 = env.initial;
        assert!(validate_plan(&env, s0, &[]));
        let (a, _) = env.transitions[s0][0];
        assert!(!validate_plan(&env, s0, &[a, a]));
        let (gt, _) = ground_truth_graph(&env);
        let start = Node::new(Role::Pick, 0);
        for goal in gt.nodes() {
            for plan in plan_bfs(&gt, start, goal).unwrap() {
                let st = (0..env.num_states()).find(|&s| env.class_of(s) == 0).unwrap();
                assert!(validate_plan(&env, st, &plan));
            }
        }
    }

    #[test]
    fn ground_truth_graph_scores_full_marks() {
        for kind in EnvKind::ALL {
            let env = build_env(&EnvSpec::new(kind, 0)).unwrap();
            let (g, states) = ground_truth_graph(&env);
            let m = evaluate(&g, &env, &states, 200, 3, 0.0).unwrap();
            assert_eq!(
                (m.opt_path_pct, m.any_path_pct, m.transition_pct),
                (100.0, 100.0, 100.0),
                "{kind:?}"
            );
        }
    }

    #[test]
    fn fabricated_edge_lowers_transition_share() {
        let env = build_env(&EnvSpec::new(EnvKind::Blocks2, 0)).unwrap();
        let (mut g, states) = ground_truth_graph(&env);
        let e_count = g.edges.len();
        // Find a (pick node, pick action) that is not applicable from that node.
        let fake = g
            .nodes()
            .into_iter()
            .filter(|n| n.role == Role::Pick)
            .flat_map(|n| (0..6).map(move |i| (n, ActionLabel::pick(i))))
            .find(|(n, a)| !g.edges.iter().any(|e| e.src == *n && e.action == *a))
            .unwrap();
        g.edges.insert(Edge {
            src: fake.0,
            action: fake.1,
            dst: Node::new(Role::Place, 0),
        });
        let m = evaluate(&g, &env, &states, 50, 0, 0.0).unwrap();
        let expected = 100.0 * e_count as f64 / (e_count + 1) as f64;
        assert!((m.transition_pct - expected).abs() < 1e-12);
    }

    #[test]
    fn metrics_csv_format() {
        let m = Metrics {
            opt_path_pct: 100.0,
            any_path_pct: 100.0,
            transition_pct: 87.5,
            v_score: 0.25,
        };
        let mut buf = Vec::new();
        write_metrics_csv(&[("ours".into(), m)], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "method,opt_path_pct,any_path_pct,transition_pct,v_score\nours,100.00,100.00,87.50,0.250000\n"
        );
    }
}
