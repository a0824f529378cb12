//! Partial colorings with an incremental action-successor table.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ColoringContext;
use crate::graph::Node;
use crate::trace::{ActionLabel, ObsId, Role};

pub(crate) const NONE: u32 = u32::MAX;

/// Why a tentative assignment was refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Infeasibility {
    NeighborConflict,
    ExactlyOneViolation,
    PairUniquenessViolation,
    CapViolation,
}

pub(crate) fn node_id(role: Role, color: u32) -> u32 {
    match role {
        Role::Pick => 2 * color,
        Role::Place => 2 * color + 1,
    }
}

fn node_of(id: u32) -> Node {
    let role = if id.is_multiple_of(2) { Role::Pick } else { Role::Place };
    Node::new(role, (id / 2) as usize)
}

fn role_slot(role: Role) -> usize {
    match role {
        Role::Pick => 0,
        Role::Place => 1,
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Color(ObsId),
    Succ(u32, ActionLabel),
    Pair(u32, u32),
    Out(u32, ActionLabel),
}

/// Colors assigned so far, plus the table Λ of fixed successors, the label carried by
/// each connected cluster pair, and the distinct outgoing labels per cluster.
///
/// Every change is journaled so a search can roll back to any earlier mark.
#[derive(Debug, Clone)]
pub struct ColoringState<'c> {
    ctx: &'c ColoringContext<'c>,
    k: [usize; 2],
    cap: usize,
    color: Vec<u32>,
    frozen: Vec<bool>,
    members: Vec<Vec<ObsId>>,
    used: [usize; 2],
    succ: HashMap<(u32, ActionLabel), (u32, u32)>,
    pair: HashMap<(u32, u32), (ActionLabel, u32)>,
    out: HashMap<(u32, ActionLabel), u32>,
    distinct: Vec<u32>,
    journal: Vec<Op>,
}

impl<'c> ColoringState<'c> {
    pub fn new(ctx: &'c ColoringContext<'c>, k_pick: usize, k_place: usize, cap: usize) -> Self {
        let nodes = 2 * k_pick.max(k_place).max(1);
        ColoringState {
            ctx,
            k: [k_pick, k_place],
            cap,
            color: vec![NONE; ctx.len()],
            frozen: vec![false; ctx.len()],
            members: vec![Vec::new(); nodes],
            used: [0, 0],
            succ: HashMap::new(),
            pair: HashMap::new(),
            out: HashMap::new(),
            distinct: vec![0; nodes],
            journal: Vec::new(),
        }
    }

    pub fn k(&self, role: Role) -> usize {
        self.k[role_slot(role)]
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn context(&self) -> &'c ColoringContext<'c> {
        self.ctx
    }

    pub fn color_of(&self, obs: ObsId) -> Option<usize> {
        (self.color[obs] != NONE).then_some(self.color[obs] as usize)
    }

    pub(crate) fn raw_colors(&self) -> &[u32] {
        &self.color
    }

    /// Number of non-empty colors of `role` among searched (non-frozen) observations.
    pub fn used(&self, role: Role) -> usize {
        self.used[role_slot(role)]
    }

    pub fn members(&self, role: Role, color: usize) -> &[ObsId] {
        &self.members[node_id(role, color as u32) as usize]
    }

    /// Successor fixed for `(node, action)`, if any.
    pub fn successor(&self, node: Node, action: ActionLabel) -> Option<Node> {
        self.succ
            .get(&(node_id(node.role, node.cluster as u32), action))
            .map(|&(d, _)| node_of(d))
    }

    /// Colors `obs` without any check. Frozen observations are never searched over;
    /// table entries touching them are created when their partners are assigned.
    pub fn freeze(&mut self, obs: ObsId, color: usize) {
        self.color[obs] = color as u32;
        self.frozen[obs] = true;
    }

    pub fn is_frozen(&self, obs: ObsId) -> bool {
        self.frozen[obs]
    }

    pub fn mark(&self) -> usize {
        self.journal.len()
    }

    /// Assigns `obs` to `color` if the table stays consistent; on failure nothing changes.
    pub fn try_assign(&mut self, obs: ObsId, color: usize) -> Result<(), Infeasibility> {
        debug_assert_eq!(self.color[obs], NONE);
        let role = self.ctx.trace().role(obs);
        assert!(color < self.k(role), "color {color} out of range for {role}");
        let mark = self.mark();
        let node = node_id(role, color as u32);
        self.color[obs] = color as u32;
        let m = &mut self.members[node as usize];
        m.push(obs);
        if m.len() == 1 {
            self.used[role_slot(role)] += 1;
        }
        self.journal.push(Op::Color(obs));
        let res = self.link_all(obs, node);
        if res.is_err() {
            self.undo_to(mark);
        }
        res
    }

    fn link_all(&mut self, obs: ObsId, node: u32) -> Result<(), Infeasibility> {
        let ctx = self.ctx;
        for &(a, t) in &ctx.index().outgoing[obs] {
            let seen = self.out.get(&(node, a)).copied().unwrap_or(0);
            if seen == 0 {
                if self.distinct[node as usize] as usize >= self.cap {
                    return Err(Infeasibility::CapViolation);
                }
                self.distinct[node as usize] += 1;
            }
            self.out.insert((node, a), seen + 1);
            self.journal.push(Op::Out(node, a));
            if self.color[t] != NONE {
                let dst = node_id(ctx.trace().role(t), self.color[t]);
                self.link(node, a, dst)?;
            }
        }
        for &(s, a) in &ctx.index().incoming[obs] {
            if self.color[s] != NONE {
                let src = node_id(ctx.trace().role(s), self.color[s]);
                self.link(src, a, node)?;
            }
        }
        Ok(())
    }

    fn link(&mut self, src: u32, a: ActionLabel, dst: u32) -> Result<(), Infeasibility> {
        if let Some(&(d, _)) = self.succ.get(&(src, a)) {
            if d != dst {
                return Err(Infeasibility::ExactlyOneViolation);
            }
        }
        if let Some(&(l, _)) = self.pair.get(&(src, dst)) {
            if l != a {
                return Err(Infeasibility::PairUniquenessViolation);
            }
        }
        self.succ.entry((src, a)).or_insert((dst, 0)).1 += 1;
        self.journal.push(Op::Succ(src, a));
        self.pair.entry((src, dst)).or_insert((a, 0)).1 += 1;
        self.journal.push(Op::Pair(src, dst));
        Ok(())
    }

    /// Rolls back every change made after `mark`.
    pub fn undo_to(&mut self, mark: usize) {
        while self.journal.len() > mark {
            match self.journal.pop().unwrap() {
                Op::Color(obs) => {
                    let role = self.ctx.trace().role(obs);
                    let node = node_id(role, self.color[obs]) as usize;
                    let popped = self.members[node].pop();
                    debug_assert_eq!(popped, Some(obs));
                    if self.members[node].is_empty() {
                        self.used[role_slot(role)] -= 1;
                    }
                    self.color[obs] = NONE;
                }
                Op::Succ(src, a) => dec(&mut self.succ, (src, a), |v| &mut v.1),
                Op::Pair(src, dst) => dec(&mut self.pair, (src, dst), |v| &mut v.1),
                Op::Out(node, a) => {
                    let c = self.out.get_mut(&(node, a)).unwrap();
                    *c -= 1;
                    if *c == 0 {
                        self.out.remove(&(node, a));
                        self.distinct[node as usize] -= 1;
                    }
                }
            }
        }
    }
}

fn dec<K: std::hash::Hash + Eq, V>(map: &mut HashMap<K, V>, key: K, count: impl Fn(&mut V) -> &mut u32) {
    let v = map.get_mut(&key).unwrap();
    let c = count(v);
    *c -= 1;
    if *c == 0 {
        map.remove(&key);
    }
}
