//! Brute-force references for tests: partition enumeration, exhaustive
//! constrained search, and exact transport on tiny supports.

use std::collections::{BTreeSet, VecDeque};

use thiserror::Error;

use crate::graph::labels_feasible;
use crate::otdist::{role_score, DistanceMatrix};
use crate::partition::Partition;
use crate::trace::{Role, Trace};

pub const MAX_ENUMERATION: usize = 12;
pub const MAX_BRUTE_FORCE: usize = 8;
pub const MAX_OT_SUPPORT: usize = 6;

const PERTURBATION: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("size {n} exceeds the oracle limit {limit}")]
    LimitExceeded { n: usize, limit: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no partition satisfies the constraints")]
    Infeasible,
}

/// Stirling number of the second kind, `S(n, k) = k S(n-1, k) + S(n-1, k-1)`.
pub fn stirling2(n: usize, k: usize) -> u128 {
    let mut row = vec![0u128; k + 1];
    row[0] = 1;
    for i in 1..=n {
        for j in (1..=k.min(i)).rev() {
            row[j] = j as u128 * row[j] + row[j - 1];
        }
        row[0] = 0;
    }
    row[k]
}

/// Lazy stream of the partitions of `0..n` into exactly `k` blocks, as restricted
/// growth strings in lexicographic order.
#[derive(Debug, Clone)]
pub struct Partitions {
    n: usize,
    k: usize,
    labels: Vec<usize>,
    started: bool,
    done: bool,
}

pub fn enumerate_partitions(n: usize, k: usize) -> Result<Partitions, OracleError> {
    if n > MAX_ENUMERATION {
        return Err(OracleError::LimitExceeded {
            n,
            limit: MAX_ENUMERATION,
        });
    }
    if k == 0 || k > n {
        return Err(OracleError::InvalidInput(format!("need 1 <= k <= n, got k={k}, n={n}")));
    }
    Ok(Partitions {
        n,
        k,
        labels: Vec::new(),
        started: false,
        done: false,
    })
}

impl Partitions {
    /// Smallest valid completion of `labels[..=pos]`, or false if none reaches `k` blocks.
    fn fill_from(&mut self, pos: usize) -> bool {
        let mut max = self.labels[..=pos].iter().copied().max().unwrap_or(0);
        for i in pos + 1..self.n {
            let remaining = self.n - i;
            // Open new blocks as late as possible while still reaching k.
            let label = if self.k - 1 - max >= remaining { max + 1 } else { 0 };
            self.labels[i] = label;
            max = max.max(label);
        }
        max + 1 == self.k
    }
}

impl Iterator for Partitions {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            self.labels = vec![0; self.n];
            if self.fill_from(0) {
                return Some(self.labels.clone());
            }
            self.done = true;
            return None;
        }
        // Increment the rightmost position that can grow, then refill the suffix minimally.
        for pos in (1..self.n).rev() {
            let prefix_max = self.labels[..pos].iter().copied().max().unwrap_or(0);
            let mut candidate = self.labels[pos] + 1;
            while candidate <= (prefix_max + 1).min(self.k - 1) {
                self.labels[pos] = candidate;
                if self.fill_from(pos) {
                    return Some(self.labels.clone());
                }
                candidate += 1;
            }
        }
        self.done = true;
        None
    }
}

/// Exhaustive search over all partitions with exactly `k_pick` and `k_place`
/// clusters, keeping structurally feasible ones and minimizing the intra-cluster
/// score. Ties go to the first partition in enumeration order.
pub fn brute_force_best(
    trace: &Trace,
    d: &DistanceMatrix,
    k_pick: usize,
    k_place: usize,
    cap: usize,
) -> Result<(Partition, f64), OracleError> {
    let picks = trace.ids_with_role(Role::Pick);
    let places = trace.ids_with_role(Role::Place);
    for ids in [&picks, &places] {
        if ids.len() > MAX_BRUTE_FORCE {
            return Err(OracleError::LimitExceeded {
                n: ids.len(),
                limit: MAX_BRUTE_FORCE,
            });
        }
    }
    if k_pick == 0 || k_place == 0 || k_pick > picks.len() || k_place > places.len() {
        return Err(OracleError::Infeasible);
    }
    let n = trace.num_observations();
    let dense = d.dense_by_id(n).map_err(|e| OracleError::InvalidInput(e.to_string()))?;
    let dist = |a: usize, b: usize| dense[a * n + b];
    let score = |ids: &[usize], rgs: &[usize], k: usize| {
        let mut clusters = vec![Vec::new(); k];
        for (&o, &c) in ids.iter().zip(rgs) {
            clusters[c].push(o);
        }
        role_score(&clusters, dist)
    };
    let pick_parts: Vec<(Vec<usize>, f64)> = enumerate_partitions(picks.len(), k_pick)?
        .map(|p| {
            let s = score(&picks, &p, k_pick);
            (p, s)
        })
        .collect();
    let place_parts: Vec<(Vec<usize>, f64)> = enumerate_partitions(places.len(), k_place)?
        .map(|p| {
            let s = score(&places, &p, k_place);
            (p, s)
        })
        .collect();

    let mut labels = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    for (pp, ps) in &pick_parts {
        for (&o, &c) in picks.iter().zip(pp) {
            labels[o] = c;
        }
        for (qp, qs) in &place_parts {
            let total = ps + qs;
            if best.as_ref().is_some_and(|(b, _)| total >= *b) {
                continue;
            }
            for (&o, &c) in places.iter().zip(qp) {
                labels[o] = c;
            }
            if labels_feasible(trace, &labels, Some(cap)) {
                best = Some((total, labels.clone()));
            }
        }
    }
    let (v, labels) = best.ok_or(OracleError::Infeasible)?;
    let pick = picks.iter().map(|&o| (o, labels[o])).collect();
    let place = places.iter().map(|&o| (o, labels[o])).collect();
    let partition = Partition::new(pick, place).map_err(|e| OracleError::InvalidInput(e.to_string()))?;
    Ok((partition, v))
}

/// Exact (unregularized) transport cost between two small weighted supports.
///
/// Visits every basic feasible solution of the transportation polytope reachable by
/// simplex pivots from the north-west-corner basis and returns the cheapest. The
/// marginals are perturbed while walking so that each vertex has a single basis;
/// costs are then evaluated with the exact marginals.
pub fn exact_ot_small(a: &[f64], b: &[f64], cost: &[Vec<f64>]) -> Result<f64, OracleError> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return Err(OracleError::InvalidInput("empty support".into()));
    }
    if n > MAX_OT_SUPPORT || m > MAX_OT_SUPPORT {
        return Err(OracleError::LimitExceeded {
            n: n.max(m),
            limit: MAX_OT_SUPPORT,
        });
    }
    if cost.len() != n || cost.iter().any(|r| r.len() != m) {
        return Err(OracleError::InvalidInput("cost matrix shape".into()));
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if (sa - 1.0).abs() > 1e-9 || (sb - 1.0).abs() > 1e-9 || a.iter().chain(b).any(|w| *w < 0.0) {
        return Err(OracleError::InvalidInput(
            "weights must be non-negative and sum to one".into(),
        ));
    }

    let pa: Vec<f64> = a.iter().map(|x| x + PERTURBATION).collect();
    let mut pb = b.to_vec();
    pb[m - 1] += n as f64 * PERTURBATION;
    let start = north_west_corner(&pa, &pb);
    let mut seen: BTreeSet<Vec<(usize, usize)>> = BTreeSet::new();
    let mut queue = VecDeque::new();
    seen.insert(start.clone());
    queue.push_back(start);
    let mut best = f64::INFINITY;
    while let Some(basis) = queue.pop_front() {
        let exact = basis_flow(&basis, a, b);
        let value: f64 = basis
            .iter()
            .zip(&exact)
            .map(|(&(i, j), x)| x.max(0.0) * cost[i][j])
            .sum();
        best = best.min(value);
        let flow = basis_flow(&basis, &pa, &pb);
        for i in 0..n {
            for j in 0..m {
                if basis.contains(&(i, j)) {
                    continue;
                }
                for next in pivots(&basis, &flow, (i, j), n) {
                    if seen.insert(next.clone()) {
                        queue.push_back(next);
                    }
                }
            }
        }
    }
    Ok(best)
}

fn north_west_corner(a: &[f64], b: &[f64]) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), b.len());
    let (mut ra, mut rb) = (a.to_vec(), b.to_vec());
    let (mut i, mut j) = (0, 0);
    let mut basis = Vec::with_capacity(n + m - 1);
    loop {
        basis.push((i, j));
        let x = ra[i].min(rb[j]);
        ra[i] -= x;
        rb[j] -= x;
        if i + 1 == n && j + 1 == m {
            break;
        }
        if (ra[i] <= rb[j] && i + 1 < n) || j + 1 == m {
            i += 1;
        } else {
            j += 1;
        }
    }
    basis.sort_unstable();
    basis
}

/// Flows on the basic cells, solved by peeling leaves of the basis spanning tree.
fn basis_flow(basis: &[(usize, usize)], a: &[f64], b: &[f64]) -> Vec<f64> {
    let (mut ra, mut rb) = (a.to_vec(), b.to_vec());
    let mut flow = vec![0.0; basis.len()];
    let mut done = vec![false; basis.len()];
    for _ in 0..basis.len() {
        // A row or column with exactly one unsolved basic cell determines that cell.
        let pick = (0..basis.len()).filter(|&c| !done[c]).find_map(|c| {
            let (i, j) = basis[c];
            let row_open = (0..basis.len()).filter(|&d| !done[d] && basis[d].0 == i).count();
            let col_open = (0..basis.len()).filter(|&d| !done[d] && basis[d].1 == j).count();
            if row_open == 1 {
                Some((c, ra[i]))
            } else if col_open == 1 {
                Some((c, rb[j]))
            } else {
                None
            }
        });
        let Some((c, x)) = pick else { break };
        let (i, j) = basis[c];
        flow[c] = x;
        ra[i] -= x;
        rb[j] -= x;
        done[c] = true;
    }
    flow
}

/// Bases reachable by entering `cell`: one per minimum-ratio leaving cell on the cycle.
fn pivots(basis: &[(usize, usize)], flow: &[f64], cell: (usize, usize), n: usize) -> Vec<Vec<(usize, usize)>> {
    // Tree nodes: rows 0..n, columns n..n+m. Find the path from column cell.1 to row cell.0.
    let target = cell.0;
    let source = n + cell.1;
    let mut prev: std::collections::BTreeMap<usize, (usize, usize)> = std::collections::BTreeMap::new();
    let mut queue = VecDeque::from([source]);
    let mut visited = BTreeSet::from([source]);
    while let Some(u) = queue.pop_front() {
        if u == target {
            break;
        }
        for (c, &(i, j)) in basis.iter().enumerate() {
            let v = if u < n && i == u {
                n + j
            } else if u >= n && j + n == u {
                i
            } else {
                continue;
            };
            if visited.insert(v) {
                prev.insert(v, (u, c));
                queue.push_back(v);
            }
        }
    }
    // Path cells from the row back to the column alternate -, +, -, ... starting after the entering cell.
    let mut cycle = Vec::new();
    let mut u = target;
    while u != source {
        let (p, c) = prev[&u];
        cycle.push(c);
        u = p;
    }
    let minus: Vec<usize> = cycle.iter().step_by(2).copied().collect();
    let theta = minus.iter().map(|&c| flow[c]).fold(f64::INFINITY, f64::min);
    minus
        .iter()
        .filter(|&&c| (flow[c] - theta).abs() <= 1e-12)
        .map(|&leave| {
            let mut next: Vec<(usize, usize)> = basis.iter().copied().filter(|&x| x != basis[leave]).collect();
            next.push(cell);
            next.sort_unstable();
            next
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::otdist::DistanceMatrix;
    use crate::partition::partition_equal_up_to_relabel;
    use crate::trace::{assign_roles, ActionLabel, Step};
    use proptest::prelude::*;

    fn bell_triangle(n: usize) -> u128 {
        let mut row = vec![1u128];
        for _ in 1..n {
            let mut next = vec![*row.last().unwrap()];
            for x in &row {
                let v = *next.last().unwrap() + x;
                next.push(v);
            }
            row = next;
        }
        *row.last().unwrap()
    }

    #[test]
    fn enumeration_examples() {
        let parts: Vec<Vec<usize>> = enumerate_partitions(3, 2).unwrap().collect();
        assert_eq!(parts, vec![vec![0, 0, 1], vec![0, 1, 0], vec![0, 1, 1]]);
        assert_eq!(
            enumerate_partitions(15, 3).unwrap_err(),
            OracleError::LimitExceeded { n: 15, limit: 12 }
        );
        assert_eq!(stirling2(15, 3), 2_375_101);
        let total: usize = (1..=6).map(|k| enumerate_partitions(6, k).unwrap().count()).sum();
        assert_eq!(total as u128, bell_triangle(6));
        assert_eq!(bell_triangle(6), 203);
    }

    #[test]
    fn enumeration_counts_match_recurrence() {
        for n in 1..=9 {
            for k in 1..=n {
                let all: Vec<Vec<usize>> = enumerate_partitions(n, k).unwrap().collect();
                assert_eq!(all.len() as u128, stirling2(n, k), "S({n},{k})");
                let unique: BTreeSet<&Vec<usize>> = all.iter().collect();
                assert_eq!(unique.len(), all.len());
                assert!(all.windows(2).all(|w| w[0] < w[1]));
                for p in &all {
                    assert_eq!(p.iter().max().unwrap() + 1, k);
                }
            }
        }
    }

    fn separable_instance() -> (Trace, DistanceMatrix) {
        // Pick observations 0,2,4,6 and place observations 1,3,5,7 in two tight groups each.
        let steps: Vec<Step> = (0..4)
            .map(|i| Step::new(2 * i, ActionLabel::pick(0), 2 * i + 1))
            .collect();
        let trace = assign_roles(&steps).unwrap();
        let group = |o: usize| (o / 4) as f64;
        let n = 8;
        let values = (0..n * n)
            .map(|k| {
                let (a, b) = (k / n, k % n);
                if a == b {
                    0.0
                } else if group(a) == group(b) {
                    0.1
                } else {
                    1.0
                }
            })
            .collect();
        (trace, DistanceMatrix::from_dense((0..n).collect(), values).unwrap())
    }

    #[test]
    fn constraint_free_trace_minimizes_score() {
        let (trace, d) = separable_instance();
        let (p, v) = brute_force_best(&trace, &d, 2, 2, 1).unwrap();
        let expected = Partition::from_labels(&trace, &[0, 0, 0, 0, 1, 1, 1, 1]).unwrap();
        assert!(partition_equal_up_to_relabel(&p, &expected).unwrap());
        assert!((v - 0.4).abs() < 1e-12);
    }

    #[test]
    fn contradictory_trace_is_infeasible() {
        // Two pick observations leave by different actions.
        let trace = assign_roles(&[
            Step::new(0, ActionLabel::pick(0), 1),
            Step::new(1, ActionLabel::place(0), 2),
            Step::new(2, ActionLabel::pick(1), 3),
            Step::new(3, ActionLabel::place(0), 4),
        ])
        .unwrap();
        let d = DistanceMatrix::from_dense((0..5).collect(), vec![0.0; 25]).unwrap();
        // A single pick cluster reaches the single place cluster by two labels.
        assert_eq!(
            brute_force_best(&trace, &d, 1, 1, 2).unwrap_err(),
            OracleError::Infeasible
        );
        assert!(brute_force_best(&trace, &d, 2, 2, 1).is_ok());
    }

    #[test]
    fn order_invariance() {
        let (trace, _) = separable_instance();
        let n = 8;
        // Distinct pairwise distances make the optimum unique.
        let dist = |a: usize, b: usize| {
            let (lo, hi) = (a.min(b), a.max(b));
            if lo == hi {
                0.0
            } else {
                0.05 + ((lo * 7 + hi * 13) % 23) as f64 / 10.0 + lo as f64 * 1e-3
            }
        };
        let d = DistanceMatrix::from_dense((0..n).collect(), (0..n * n).map(|k| dist(k / n, k % n)).collect()).unwrap();
        let (p, v) = brute_force_best(&trace, &d, 3, 2, 1).unwrap();
        let perm: Vec<usize> = vec![6, 7, 4, 5, 2, 3, 0, 1];
        let steps: Vec<Step> = trace
            .steps()
            .iter()
            .map(|s| Step::new(perm[s.src], s.action, perm[s.dst]))
            .collect();
        let permuted = assign_roles(&steps).unwrap();
        let mut values = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                values[perm[a] * n + perm[b]] = dist(a, b);
            }
        }
        let pd = DistanceMatrix::from_dense((0..n).collect(), values).unwrap();
        let (q, w) = brute_force_best(&permuted, &pd, 3, 2, 1).unwrap();
        assert!((v - w).abs() < 1e-12);
        let back = |o: usize| perm.iter().position(|&x| x == o).unwrap();
        let mapped = Partition::new(
            q.pick.iter().map(|(&o, &c)| (back(o), c)).collect(),
            q.place.iter().map(|(&o, &c)| (back(o), c)).collect(),
        )
        .unwrap();
        assert!(partition_equal_up_to_relabel(&p, &mapped).unwrap());
    }

    #[test]
    fn exact_ot_examples() {
        let c = vec![vec![0.0, 3.0], vec![4.0, 0.0]];
        assert_eq!(exact_ot_small(&[1.0], &[1.0], &[vec![7.5]]).unwrap(), 7.5);
        assert_eq!(exact_ot_small(&[0.5, 0.5], &[0.5, 0.5], &c).unwrap(), 0.0);
        // Two matchings for uniform 2x2: identity costs (c00 + c11)/2, swap costs (c01 + c10)/2.
        let c = vec![vec![1.0, 2.0], vec![5.0, 3.0]];
        let by_hand = f64::min((1.0 + 3.0) / 2.0, (2.0 + 5.0) / 2.0);
        assert!((exact_ot_small(&[0.5, 0.5], &[0.5, 0.5], &c).unwrap() - by_hand).abs() < 1e-12);
    }

    fn assignment_oracle(n: usize, cost: &[Vec<f64>]) -> f64 {
        // Uniform weights on equal-size supports: an optimal plan is a permutation.
        fn rec(i: usize, used: &mut Vec<bool>, cost: &[Vec<f64>], acc: f64, best: &mut f64) {
            if i == used.len() {
                *best = best.min(acc);
                return;
            }
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    rec(i + 1, used, cost, acc + cost[i][j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(0, &mut vec![false; n], cost, 0.0, &mut best);
        best / n as f64
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn exact_ot_matches_permutation_search(n in 1usize..=5, raw in prop::collection::vec(0.0f64..10.0, 25)) {
            let cost: Vec<Vec<f64>> = (0..n).map(|i| raw[i * 5..i * 5 + n].to_vec()).collect();
            let w = vec![1.0 / n as f64; n];
            let exact = exact_ot_small(&w, &w, &cost).unwrap();
            prop_assert!((exact - assignment_oracle(n, &cost)).abs() < 1e-9);
        }

        #[test]
        fn exact_ot_bounded_by_independent_plan(
            wa in prop::collection::vec(0.05f64..1.0, 1..=4),
            wb in prop::collection::vec(0.05f64..1.0, 1..=4),
            raw in prop::collection::vec(0.0f64..10.0, 16),
        ) {
            let sa: f64 = wa.iter().sum();
            let sb: f64 = wb.iter().sum();
            let a: Vec<f64> = wa.iter().map(|x| x / sa).collect();
            let b: Vec<f64> = wb.iter().map(|x| x / sb).collect();
            let cost: Vec<Vec<f64>> = (0..a.len()).map(|i| raw[i * 4..i * 4 + b.len()].to_vec()).collect();
            let exact = exact_ot_small(&a, &b, &cost).unwrap();
            let independent: f64 = (0..a.len()).flat_map(|i| (0..b.len()).map(move |j| (i, j))).map(|(i, j)| a[i] * b[j] * cost[i][j]).sum();
            let lower: f64 = (0..a.len()).map(|i| a[i] * cost[i].iter().copied().fold(f64::INFINITY, f64::min)).sum();
            prop_assert!(exact <= independent + 1e-9);
            prop_assert!(exact >= lower - 1e-9);
        }
    }
}
