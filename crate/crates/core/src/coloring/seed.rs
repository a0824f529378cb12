//! Vision-only seeding of one role.

use super::ColoringContext;
use crate::partition::Assignment;
use crate::trace::ObsId;

/// Greedy grouping of `ids` by visual affinity into at most `k` clusters.
///
/// Seeds are the most central remaining observations. A cluster grows by its nearest
/// candidate while that candidate is, on average, no farther from the cluster than from
/// the other unassigned observations and no farther than the split point between short
/// and long distances among `ids` (Otsu's threshold on a log scale). Whatever is left once `k` clusters
/// are open joins the nearest cluster by mean distance.
pub fn seed_pick_greedy(ctx: &ColoringContext<'_>, ids: &[ObsId], k: usize) -> Assignment {
    let mut ids = ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut clusters: Vec<Vec<ObsId>> = Vec::new();
    let limit = distance_split(ctx, &ids);
    let mut free = ids.clone();
    while !free.is_empty() && clusters.len() < k {
        let seed = *free
            .iter()
            .max_by(|&&a, &&b| {
                centrality(ctx, a, &free)
                    .total_cmp(&centrality(ctx, b, &free))
                    .then(b.cmp(&a))
            })
            .unwrap();
        free.retain(|&o| o != seed);
        let mut cluster = vec![seed];
        while free.len() > 1 {
            let (cand, to_cluster) = free
                .iter()
                .map(|&o| (o, mean_distance(ctx, o, &cluster)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .unwrap();
            let others: Vec<ObsId> = free.iter().copied().filter(|&o| o != cand).collect();
            if to_cluster > mean_distance(ctx, cand, &others) || to_cluster > limit {
                break;
            }
            cluster.push(cand);
            free.retain(|&o| o != cand);
        }
        clusters.push(cluster);
    }
    let mut assignment: Assignment = clusters
        .iter()
        .enumerate()
        .flat_map(|(c, m)| m.iter().map(move |&o| (o, c)))
        .collect();
    for &o in &free {
        let nearest = (0..clusters.len())
            .min_by(|&a, &b| {
                mean_distance(ctx, o, &clusters[a])
                    .total_cmp(&mean_distance(ctx, o, &clusters[b]))
                    .then(a.cmp(&b))
            })
            .unwrap();
        assignment.insert(o, nearest);
    }
    assignment
}

fn centrality(ctx: &ColoringContext<'_>, o: ObsId, pool: &[ObsId]) -> f64 {
    let others = pool.iter().filter(|&&p| p != o);
    let n = pool.len().saturating_sub(1);
    if n == 0 {
        return 0.0;
    }
    others.map(|&p| ctx.affinity(o, p)).sum::<f64>() / n as f64
}

fn mean_distance(ctx: &ColoringContext<'_>, o: ObsId, to: &[ObsId]) -> f64 {
    to.iter().map(|&p| ctx.distance(o, p)).sum::<f64>() / to.len() as f64
}

/// Threshold maximizing the between-class variance of the log pairwise distances.
pub(crate) fn distance_split(ctx: &ColoringContext<'_>, ids: &[ObsId]) -> f64 {
    let mut v: Vec<f64> = Vec::new();
    for (x, &a) in ids.iter().enumerate() {
        for &b in &ids[x + 1..] {
            v.push(ctx.distance(a, b).max(1e-9).ln());
        }
    }
    if v.len() < 2 {
        return f64::INFINITY;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let total: f64 = v.iter().sum();
    let mut below = 0.0;
    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..v.len() - 1 {
        below += v[i];
        let n0 = (i + 1) as f64;
        let (m0, m1) = (below / n0, (total - below) / (n - n0));
        let between = n0 * (n - n0) * (m0 - m1).powi(2);
        if between > best.0 {
            best = (between, 0.5 * (v[i] + v[i + 1]));
        }
    }
    best.1.exp()
}
