//! Clustering baselines: each role is clustered on its own from the shared distance
//! matrix, and the graph is induced afterwards with violations reported, not prevented.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{induce_graph_unchecked, AbstractGraph, GraphError, Violation};
use crate::otdist::{intra_cluster_score, DistanceMatrix};
use crate::partition::{Assignment, Partition};
use crate::trace::{ObsId, Role, Trace};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("every point is an outlier")]
    DegenerateClustering,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    Average,
    Complete,
    Single,
}

impl Linkage {
    pub const ALL: [Linkage; 3] = [Linkage::Average, Linkage::Complete, Linkage::Single];
}

/// How flat clusters are read off the density hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterSelection {
    /// Excess of mass: the most stable clusters.
    Eom,
    /// The finest clusters of the hierarchy.
    Leaf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DensityParams {
    pub min_cluster_size: usize,
    pub min_samples: usize,
    pub selection: ClusterSelection,
}

impl DensityParams {
    pub fn new(min_cluster_size: usize, min_samples: usize) -> Self {
        DensityParams {
            min_cluster_size,
            min_samples,
            selection: ClusterSelection::Eom,
        }
    }

    /// Small clusters read from the leaves of the hierarchy.
    pub fn over_segmenting() -> Self {
        DensityParams {
            min_cluster_size: 2,
            min_samples: 1,
            selection: ClusterSelection::Leaf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Baseline {
    Agglomerative {
        linkage: Linkage,
        k_pick: usize,
        k_place: usize,
    },
    /// Linkage and cut chosen per role by silhouette over the given cluster counts.
    AgglomerativeSweep {
        ks_pick: Vec<usize>,
        ks_place: Vec<usize>,
    },
    Density(DensityParams),
}

impl Baseline {
    pub fn name(&self) -> String {
        match self {
            Baseline::Agglomerative { linkage, .. } => format!("agglomerative_{linkage:?}").to_lowercase(),
            Baseline::AgglomerativeSweep { .. } => "agglomerative".into(),
            Baseline::Density(_) => "density".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub partition: Partition,
    pub graph: AbstractGraph,
    pub violations: Vec<Violation>,
    pub v_score: f64,
}

/// Distances among `ids`, row-major.
fn submatrix(d: &DistanceMatrix, ids: &[ObsId]) -> Result<Vec<f64>, BaselineError> {
    let idx: Vec<usize> = ids
        .iter()
        .map(|&o| {
            d.index_of(o)
                .ok_or_else(|| BaselineError::InvalidInput(format!("observation {o} is not in the distance matrix")))
        })
        .collect::<Result<_, _>>()?;
    let n = ids.len();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = d.get(idx[i], idx[j]);
        }
    }
    Ok(m)
}

/// Labels clusters by their smallest member.
fn assignment_from_groups(ids: &[ObsId], mut groups: Vec<Vec<usize>>) -> Assignment {
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.retain(|g| !g.is_empty());
    groups.sort();
    groups
        .iter()
        .enumerate()
        .flat_map(|(c, g)| g.iter().map(move |&p| (ids[p], c)))
        .collect()
}

/// Bottom-up merging until `k` clusters remain. Ties go to the pair with the smallest
/// member ids.
pub fn agglomerative(
    d: &DistanceMatrix,
    ids: &[ObsId],
    k: usize,
    linkage: Linkage,
) -> Result<Assignment, BaselineError> {
    let mut ids = ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let n = ids.len();
    if k == 0 || k > n {
        return Err(BaselineError::InvalidInput(format!(
            "cannot form {k} clusters from {n} observations"
        )));
    }
    let mut m = submatrix(d, &ids)?;
    // Clusters are named by their smallest member, which is also their row in `m`.
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut alive: Vec<usize> = (0..n).collect();
    while alive.len() > k {
        let mut best = (f64::INFINITY, 0, 0);
        for (x, &a) in alive.iter().enumerate() {
            for &b in &alive[x + 1..] {
                let v = m[a * n + b];
                if v < best.0 {
                    best = (v, a, b);
                }
            }
        }
        let (_, a, b) = best;
        let (na, nb) = (members[a].len() as f64, members[b].len() as f64);
        for &c in alive.iter().filter(|&&c| c != a && c != b) {
            let (da, db) = (m[c * n + a], m[c * n + b]);
            let merged = match linkage {
                Linkage::Average => (na * da + nb * db) / (na + nb),
                Linkage::Complete => da.max(db),
                Linkage::Single => da.min(db),
            };
            m[c * n + a] = merged;
            m[a * n + c] = merged;
        }
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        alive.retain(|&c| c != b);
    }
    Ok(assignment_from_groups(&ids, members))
}

/// Mean silhouette over all points; singletons count as zero.
pub fn silhouette(d: &DistanceMatrix, assignment: &Assignment) -> Result<f64, BaselineError> {
    let ids: Vec<ObsId> = assignment.keys().copied().collect();
    let labels: Vec<usize> = assignment.values().copied().collect();
    let n = ids.len();
    let k = labels.iter().max().map_or(0, |&c| c + 1);
    if k < 2 {
        return Ok(0.0);
    }
    let m = submatrix(d, &ids)?;
    let mut size = vec![0usize; k];
    for &c in &labels {
        size[c] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        if size[labels[i]] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += m[i * n + j];
            }
        }
        let a = sums[labels[i]] / (size[labels[i]] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && size[c] > 0)
            .map(|c| sums[c] / size[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// The agglomerative clustering with the highest silhouette over `ks` and all linkages.
/// Ties go to the smaller `k`, then to the linkage order of [`Linkage::ALL`].
pub fn agglomerative_by_silhouette(
    d: &DistanceMatrix,
    ids: &[ObsId],
    ks: &[usize],
) -> Result<(Assignment, Linkage, usize), BaselineError> {
    let ks: BTreeSet<usize> = ks.iter().copied().filter(|&k| k >= 1 && k <= ids.len()).collect();
    let mut best: Option<(f64, Assignment, Linkage, usize)> = None;
    for &k in &ks {
        for linkage in Linkage::ALL {
            let a = agglomerative(d, ids, k, linkage)?;
            let s = silhouette(d, &a)?;
            if best.as_ref().is_none_or(|b| s > b.0) {
                best = Some((s, a, linkage, k));
            }
        }
    }
    best.map(|(_, a, l, k)| (a, l, k))
        .ok_or_else(|| BaselineError::InvalidInput("no admissible cluster count".into()))
}

struct Merge {
    children: [usize; 2],
    dist: f64,
    size: usize,
}

/// Density clustering on mutual-reachability distances with outliers joined to the
/// nearest cluster by mean distance.
///
/// The core distance of a point is its distance to its `min_samples`-th nearest
/// neighbor. Single-linkage merges on the mutual-reachability distances form a
/// hierarchy; a cluster lives while at least `min_cluster_size` points stay together,
/// and its stability is the total density `1/distance` its points spend inside it.
pub fn density_cluster(d: &DistanceMatrix, ids: &[ObsId], params: &DensityParams) -> Result<Assignment, BaselineError> {
    if params.min_cluster_size == 0 || params.min_samples == 0 {
        return Err(BaselineError::InvalidInput(
            "min_cluster_size and min_samples must be positive".into(),
        ));
    }
    let mut ids = ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let n = ids.len();
    if n == 0 || params.min_cluster_size > n {
        return Err(BaselineError::DegenerateClustering);
    }
    let m = submatrix(d, &ids)?;
    let core: Vec<f64> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| m[i * n + j]).collect();
            row.sort_by(f64::total_cmp);
            row.get(params.min_samples.min(row.len()).saturating_sub(1))
                .copied()
                .unwrap_or(0.0)
        })
        .collect();
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            edges.push((m[i * n + j].max(core[i]).max(core[j]), i, j));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));

    // Single-linkage hierarchy: leaves 0..n, merge t is node n + t.
    let mut parent: Vec<usize> = (0..2 * n).collect();
    fn root(p: &mut [usize], x: usize) -> usize {
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
    let mut merges: Vec<Merge> = Vec::with_capacity(n.saturating_sub(1));
    let size_of = |merges: &[Merge], node: usize| if node < n { 1 } else { merges[node - n].size };
    for &(w, i, j) in &edges {
        let (a, b) = (root(&mut parent, i), root(&mut parent, j));
        if a == b {
            continue;
        }
        let node = n + merges.len();
        let size = size_of(&merges, a) + size_of(&merges, b);
        merges.push(Merge {
            children: [a, b],
            dist: w,
            size,
        });
        parent[a] = node;
        parent[b] = node;
        if merges.len() == n - 1 {
            break;
        }
    }

    let lambda = |w: f64| 1.0 / w.max(1e-12);
    let leaves = |merges: &[Merge], node: usize| {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < n {
                out.push(x);
            } else {
                stack.extend(merges[x - n].children);
            }
        }
        out
    };

    // Condensed tree: clusters with birth density, stability and child clusters.
    struct Cluster {
        node: usize,
        birth: f64,
        stability: f64,
        children: Vec<usize>,
    }
    let top = if n == 1 { 0 } else { 2 * n - 2 };
    let mut clusters = vec![Cluster {
        node: top,
        birth: 0.0,
        stability: 0.0,
        children: Vec::new(),
    }];
    let mut stack = vec![(top, 0usize)];
    while let Some((node, c)) = stack.pop() {
        if node < n {
            continue;
        }
        let mg = &merges[node - n];
        let l = lambda(mg.dist);
        let [a, b] = mg.children;
        let (sa, sb) = (size_of(&merges, a), size_of(&merges, b));
        let big = |s: usize| s >= params.min_cluster_size;
        if big(sa) && big(sb) {
            clusters[c].stability += (sa + sb) as f64 * (l - clusters[c].birth);
            for child in [a, b] {
                let id = clusters.len();
                clusters.push(Cluster {
                    node: child,
                    birth: l,
                    stability: 0.0,
                    children: Vec::new(),
                });
                clusters[c].children.push(id);
                stack.push((child, id));
            }
        } else {
            let birth = clusters[c].birth;
            for (child, s) in [(a, sa), (b, sb)] {
                if big(s) {
                    stack.push((child, c));
                } else {
                    clusters[c].stability += s as f64 * (l - birth);
                }
            }
        }
    }

    // Children are created after their parents, so a reverse scan sees them first.
    let mut selected = vec![false; clusters.len()];
    let mut best = vec![0.0; clusters.len()];
    for c in (0..clusters.len()).rev() {
        let below: f64 = clusters[c].children.iter().map(|&ch| best[ch]).sum();
        let pick_self = match params.selection {
            ClusterSelection::Eom => clusters[c].children.is_empty() || clusters[c].stability >= below,
            ClusterSelection::Leaf => clusters[c].children.is_empty(),
        };
        if pick_self {
            selected[c] = true;
            best[c] = clusters[c].stability;
        } else {
            best[c] = below;
        }
    }
    // Keep the topmost selected clusters.
    let mut chosen = Vec::new();
    let mut queue = vec![0usize];
    while let Some(c) = queue.pop() {
        if selected[c] {
            chosen.push(c);
        } else {
            queue.extend(clusters[c].children.iter().copied());
        }
    }
    chosen.sort_unstable();
    let mut label = vec![usize::MAX; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &c in &chosen {
        let pts = leaves(&merges, clusters[c].node);
        for &p in &pts {
            label[p] = groups.len();
        }
        groups.push(pts);
    }
    if groups.is_empty() {
        return Err(BaselineError::DegenerateClustering);
    }
    // Outliers join the nearest cluster by mean distance.
    let outliers: Vec<usize> = (0..n).filter(|&p| label[p] == usize::MAX).collect();
    let mut joins = Vec::new();
    for p in outliers {
        let nearest = (0..groups.len())
            .min_by(|&x, &y| {
                let mean = |g: &Vec<usize>| g.iter().map(|&q| m[p * n + q]).sum::<f64>() / g.len() as f64;
                mean(&groups[x]).total_cmp(&mean(&groups[y])).then(x.cmp(&y))
            })
            .expect("at least one cluster");
        joins.push((p, nearest));
    }
    for (p, g) in joins {
        groups[g].push(p);
    }
    Ok(assignment_from_groups(&ids, groups))
}

fn cluster_role(d: &DistanceMatrix, ids: &[ObsId], role: Role, method: &Baseline) -> Result<Assignment, BaselineError> {
    match method {
        Baseline::Agglomerative {
            linkage,
            k_pick,
            k_place,
        } => {
            let k = if role == Role::Pick { *k_pick } else { *k_place };
            agglomerative(d, ids, k, *linkage)
        }
        Baseline::AgglomerativeSweep { ks_pick, ks_place } => {
            let ks = if role == Role::Pick { ks_pick } else { ks_place };
            agglomerative_by_silhouette(d, ids, ks).map(|(a, _, _)| a)
        }
        Baseline::Density(params) => density_cluster(d, ids, params),
    }
}

/// Clusters each role separately, then induces the graph and lists its violations.
pub fn baseline_pipeline(
    trace: &Trace,
    d: &DistanceMatrix,
    method: &Baseline,
) -> Result<BaselineResult, BaselineError> {
    let pick = cluster_role(d, &trace.ids_with_role(Role::Pick), Role::Pick, method)?;
    let place = cluster_role(d, &trace.ids_with_role(Role::Place), Role::Place, method)?;
    let partition = Partition::new(pick, place).map_err(GraphError::from)?;
    let (graph, violations) = induce_graph_unchecked(&partition, trace, None)?;
    let v_score = intra_cluster_score(&partition, d);
    Ok(BaselineResult {
        partition,
        graph,
        violations,
        v_score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Violation;
    use crate::trace::{assign_roles, ActionLabel, Step};

    /// Euclidean distances between planar points.
    fn from_points(points: &[(f64, f64)]) -> DistanceMatrix {
        let n = points.len();
        let values = (0..n * n)
            .map(|k| {
                let (a, b) = (points[k / n], points[k % n]);
                ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
            })
            .collect();
        DistanceMatrix::from_dense((0..n).collect(), values).unwrap()
    }

    /// Three triples of spread 1 whose centers are 10 apart.
    fn triples() -> DistanceMatrix {
        let centers = [(0.0, 0.0), (10.0, 0.0), (5.0, 9.0)];
        let offsets = [(0.0, 0.0), (1.0, 0.0), (0.5, 0.8)];
        let points: Vec<(f64, f64)> = centers
            .iter()
            .flat_map(|c| offsets.iter().map(move |o| (c.0 + o.0, c.1 + o.1)))
            .collect();
        from_points(&points)
    }

    fn groups(a: &Assignment) -> Vec<Vec<ObsId>> {
        let k = a.values().max().map_or(0, |&c| c + 1);
        let mut out = vec![Vec::new(); k];
        for (&o, &c) in a {
            out[c].push(o);
        }
        out
    }

    #[test]
    fn agglomerative_extremes() {
        let d = triples();
        let ids: Vec<ObsId> = (0..9).collect();
        for linkage in Linkage::ALL {
            let all = agglomerative(&d, &ids, 9, linkage).unwrap();
            assert_eq!(groups(&all).len(), 9);
            let one = agglomerative(&d, &ids, 1, linkage).unwrap();
            assert!(one.values().all(|&c| c == 0));
        }
        assert!(agglomerative(&d, &ids, 10, Linkage::Average).is_err());
    }

    #[test]
    fn agglomerative_recovers_separated_triples() {
        let d = triples();
        let ids: Vec<ObsId> = (0..9).collect();
        for linkage in Linkage::ALL {
            let a = agglomerative(&d, &ids, 3, linkage).unwrap();
            assert_eq!(
                groups(&a),
                vec![vec![0, 1, 2], vec![3, 4, 5], vec![6, 7, 8]],
                "{linkage:?}"
            );
        }
        let (a, _, k) = agglomerative_by_silhouette(&d, &ids, &[2, 3, 4, 5]).unwrap();
        assert_eq!(k, 3);
        assert_eq!(groups(&a).len(), 3);
    }

    #[test]
    fn linkages_differ_on_a_chain() {
        // Points on a line at 0, 1, 2, 3, 10: single linkage chains, complete does not.
        let d = from_points(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (4.5, 0.0)]);
        let ids: Vec<ObsId> = (0..5).collect();
        let single = agglomerative(&d, &ids, 2, Linkage::Single).unwrap();
        assert_eq!(groups(&single), vec![vec![0, 1, 2, 3], vec![4]]);
        let complete = agglomerative(&d, &ids, 2, Linkage::Complete).unwrap();
        assert_eq!(groups(&complete), vec![vec![0, 1], vec![2, 3, 4]]);
    }

    #[test]
    fn silhouette_values() {
        // Two pairs at distance 1 inside and 3 across: each point has a = 1, b = 3.
        let d = from_points(&[(0.0, 0.0), (1.0, 0.0), (0.0, 3.0), (1.0, 3.0)]);
        let a: Assignment = [(0, 0), (1, 0), (2, 1), (3, 1)].into_iter().collect();
        let expected = {
            let b = (3.0 + 10f64.sqrt()) / 2.0;
            (b - 1.0) / b
        };
        assert!((silhouette(&d, &a).unwrap() - expected).abs() < 1e-12);
        let one: Assignment = (0..4).map(|o| (o, 0)).collect();
        assert_eq!(silhouette(&d, &one).unwrap(), 0.0);
    }

    #[test]
    fn density_absorbs_outlier() {
        let mut points = Vec::new();
        for c in [(0.0, 0.0), (20.0, 0.0)] {
            for i in 0..5 {
                points.push((c.0 + 0.3 * i as f64, c.1 + 0.2 * (i % 2) as f64));
            }
        }
        points.push((6.0, 0.0));
        let d = from_points(&points);
        let ids: Vec<ObsId> = (0..11).collect();
        let a = density_cluster(&d, &ids, &DensityParams::new(3, 2)).unwrap();
        assert_eq!(groups(&a), vec![vec![0, 1, 2, 3, 4, 10], vec![5, 6, 7, 8, 9]]);
    }

    #[test]
    fn density_degenerate_and_uniform() {
        let d = from_points(&[(0.0, 0.0), (1.0, 0.0), (0.5, 0.866)]);
        let ids: Vec<ObsId> = (0..3).collect();
        assert!(matches!(
            density_cluster(&d, &ids, &DensityParams::new(4, 1)),
            Err(BaselineError::DegenerateClustering)
        ));
        let n = 6;
        let values = (0..n * n).map(|k| if k / n == k % n { 0.0 } else { 1.0 }).collect();
        let uniform = DistanceMatrix::from_dense((0..n).collect(), values).unwrap();
        let ids: Vec<ObsId> = (0..n).collect();
        let a = density_cluster(&uniform, &ids, &DensityParams::new(2, 2)).unwrap();
        assert!(a.values().all(|&c| c == 0));
    }

    #[test]
    fn leaf_selection_splits_finer() {
        let d = triples();
        let ids: Vec<ObsId> = (0..9).collect();
        let eom = density_cluster(&d, &ids, &DensityParams::new(3, 1)).unwrap();
        assert_eq!(groups(&eom).len(), 3);
        let leaf = density_cluster(&d, &ids, &DensityParams::over_segmenting()).unwrap();
        assert!(groups(&leaf).len() >= 3);
    }

    #[test]
    fn merged_picks_report_exactly_one_violation() {
        // Picks 0 and 2 look alike, their successors 1 and 3 do not.
        let trace = assign_roles(&[
            Step::new(0, ActionLabel::pick(0), 1),
            Step::new(2, ActionLabel::pick(0), 3),
        ])
        .unwrap();
        let d = from_points(&[(0.0, 0.0), (0.0, 5.0), (0.1, 0.0), (9.0, 5.0)]);
        let method = Baseline::Agglomerative {
            linkage: Linkage::Average,
            k_pick: 1,
            k_place: 2,
        };
        let r = baseline_pipeline(&trace, &d, &method).unwrap();
        assert!(r.violations.iter().any(|v| matches!(v, Violation::ExactlyOne { .. })));
        assert!((r.v_score - 0.1).abs() < 1e-12);
    }
}
