//! Role-split cluster assignments.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{ObsId, Role, Trace};

/// Cluster assignment for the observations of one role.
pub type Assignment = BTreeMap<ObsId, usize>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PartitionError {
    #[error("{role} cluster ids are not dense: expected 0..{k}, found {found:?}")]
    NotDense { role: Role, k: usize, found: Vec<usize> },
    #[error("observation {0} appears in both roles")]
    Overlap(ObsId),
    #[error("observation {obs} has role {actual} in the trace but is assigned as {assigned}")]
    RoleMismatch { obs: ObsId, actual: Role, assigned: Role },
    #[error("observation {0} is not assigned")]
    Missing(ObsId),
    #[error("partitions cover different observation sets")]
    DomainMismatch,
}

/// A total assignment of pick- and place-role observations to clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub pick: Assignment,
    pub place: Assignment,
    pub k_pick: usize,
    pub k_place: usize,
}

fn dense_count(role: Role, a: &Assignment) -> Result<usize, PartitionError> {
    let used: BTreeSet<usize> = a.values().copied().collect();
    let k = used.len();
    if used.iter().copied().ne(0..k) {
        return Err(PartitionError::NotDense {
            role,
            k,
            found: used.into_iter().collect(),
        });
    }
    Ok(k)
}

impl Partition {
    pub fn new(pick: Assignment, place: Assignment) -> Result<Self, PartitionError> {
        if let Some(o) = pick.keys().find(|o| place.contains_key(o)) {
            return Err(PartitionError::Overlap(*o));
        }
        let k_pick = dense_count(Role::Pick, &pick)?;
        let k_place = dense_count(Role::Place, &place)?;
        Ok(Partition {
            pick,
            place,
            k_pick,
            k_place,
        })
    }

    /// Builds a partition from per-observation labels, splitting by trace role.
    /// Labels are renumbered densely in order of first appearance per role.
    pub fn from_labels(trace: &Trace, labels: &[usize]) -> Result<Self, PartitionError> {
        let mut pick = Assignment::new();
        let mut place = Assignment::new();
        let mut remap: [BTreeMap<usize, usize>; 2] = [BTreeMap::new(), BTreeMap::new()];
        for obs in 0..trace.num_observations() {
            let label = *labels.get(obs).ok_or(PartitionError::Missing(obs))?;
            let (side, target) = match trace.role(obs) {
                Role::Pick => (0, &mut pick),
                Role::Place => (1, &mut place),
            };
            let next = remap[side].len();
            let c = *remap[side].entry(label).or_insert(next);
            target.insert(obs, c);
        }
        Partition::new(pick, place)
    }

    pub fn assignment(&self, role: Role) -> &Assignment {
        match role {
            Role::Pick => &self.pick,
            Role::Place => &self.place,
        }
    }

    pub fn k(&self, role: Role) -> usize {
        match role {
            Role::Pick => self.k_pick,
            Role::Place => self.k_place,
        }
    }

    pub fn cluster_of(&self, obs: ObsId) -> Option<(Role, usize)> {
        if let Some(&c) = self.pick.get(&obs) {
            Some((Role::Pick, c))
        } else {
            self.place.get(&obs).map(|&c| (Role::Place, c))
        }
    }

    /// Members of each cluster of `role`, indexed by cluster id.
    pub fn members(&self, role: Role) -> Vec<Vec<ObsId>> {
        let mut out = vec![Vec::new(); self.k(role)];
        for (&o, &c) in self.assignment(role) {
            out[c].push(o);
        }
        out
    }

    /// Checks that the partition covers exactly the trace's observations with matching roles.
    pub fn check_covers(&self, trace: &Trace) -> Result<(), PartitionError> {
        for obs in trace.observations() {
            match self.cluster_of(obs.id) {
                None => return Err(PartitionError::Missing(obs.id)),
                Some((role, _)) if role != obs.role => {
                    return Err(PartitionError::RoleMismatch {
                        obs: obs.id,
                        actual: obs.role,
                        assigned: role,
                    })
                }
                _ => {}
            }
        }
        if self.pick.len() + self.place.len() != trace.num_observations() {
            return Err(PartitionError::DomainMismatch);
        }
        Ok(())
    }
}

fn bijective(a: &Assignment, b: &Assignment) -> bool {
    let mut fwd = BTreeMap::new();
    let mut bwd = BTreeMap::new();
    for (o, &ca) in a {
        let cb = b[o];
        if *fwd.entry(ca).or_insert(cb) != cb || *bwd.entry(cb).or_insert(ca) != ca {
            return false;
        }
    }
    true
}

/// True iff `a` and `b` differ only by a renaming of cluster ids within each role.
pub fn partition_equal_up_to_relabel(a: &Partition, b: &Partition) -> Result<bool, PartitionError> {
    let same_keys = |x: &Assignment, y: &Assignment| x.len() == y.len() && x.keys().eq(y.keys());
    if !same_keys(&a.pick, &b.pick) || !same_keys(&a.place, &b.place) {
        return Err(PartitionError::DomainMismatch);
    }
    Ok(a.k_pick == b.k_pick && a.k_place == b.k_place && bijective(&a.pick, &b.pick) && bijective(&a.place, &b.place))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn part(pick: &[usize], place: &[usize]) -> Partition {
        let n = pick.len();
        Partition::new(
            pick.iter().copied().enumerate().collect(),
            place.iter().enumerate().map(|(i, &c)| (n + i, c)).collect(),
        )
        .unwrap()
    }

    /// Exhaustive bijection search, independent of the map-based check.
    fn relabel_oracle(a: &Partition, b: &Partition) -> bool {
        fn role_ok(a: &Assignment, b: &Assignment, ka: usize, kb: usize) -> bool {
            if ka != kb {
                return false;
            }
            let mut perm: Vec<usize> = (0..ka).collect();
            permutations(&mut perm, 0, &mut |p| a.iter().all(|(o, &c)| p[c] == b[o]))
        }
        fn permutations(p: &mut Vec<usize>, i: usize, f: &mut dyn FnMut(&[usize]) -> bool) -> bool {
            if i == p.len() {
                return f(p);
            }
            for j in i..p.len() {
                p.swap(i, j);
                if permutations(p, i + 1, f) {
                    p.swap(i, j);
                    return true;
                }
                p.swap(i, j);
            }
            false
        }
        role_ok(&a.pick, &b.pick, a.k_pick, b.k_pick) && role_ok(&a.place, &b.place, a.k_place, b.k_place)
    }

    #[test]
    fn relabel_examples() {
        let a = part(&[0, 0, 1], &[0, 1, 1]);
        assert!(partition_equal_up_to_relabel(&a, &a).unwrap());
        let swapped = part(&[1, 1, 0], &[0, 1, 1]);
        assert!(partition_equal_up_to_relabel(&a, &swapped).unwrap());
        let merged = part(&[0, 0, 0], &[0, 1, 1]);
        assert!(!partition_equal_up_to_relabel(&a, &merged).unwrap());
        assert!(!relabel_oracle(&a, &merged));
        let other = part(&[0, 0], &[0, 1, 1]);
        assert_eq!(
            partition_equal_up_to_relabel(&a, &other).unwrap_err(),
            PartitionError::DomainMismatch
        );
    }

    #[test]
    fn rejects_sparse_ids() {
        let err = Partition::new([(0, 0), (1, 2)].into_iter().collect(), Assignment::new()).unwrap_err();
        assert!(matches!(err, PartitionError::NotDense { .. }));
    }

    fn canon(labels: Vec<usize>) -> Vec<usize> {
        let mut map = BTreeMap::new();
        labels
            .into_iter()
            .map(|l| {
                let next = map.len();
                *map.entry(l).or_insert(next)
            })
            .collect()
    }

    fn arb_partition() -> impl Strategy<Value = Partition> {
        (prop::collection::vec(0..3usize, 4), prop::collection::vec(0..3usize, 3))
            .prop_map(|(p, q)| part(&canon(p), &canon(q)))
    }

    proptest! {
        #[test]
        fn matches_exhaustive_oracle(a in arb_partition(), b in arb_partition()) {
            prop_assert_eq!(partition_equal_up_to_relabel(&a, &b).unwrap(), relabel_oracle(&a, &b));
        }

        #[test]
        fn equivalence_relation(a in arb_partition(), b in arb_partition(), c in arb_partition()) {
            let eq = |x: &Partition, y: &Partition| partition_equal_up_to_relabel(x, y).unwrap();
            prop_assert!(eq(&a, &a));
            prop_assert_eq!(eq(&a, &b), eq(&b, &a));
            if eq(&a, &b) && eq(&b, &c) {
                prop_assert!(eq(&a, &c));
            }
        }
    }
}
