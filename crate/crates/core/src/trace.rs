//! Observation–action traces and role assignment.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Observation identifier. Ids are dense integers assigned in trace order.
pub type ObsId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Pick,
    Place,
}

impl Role {
    pub fn opposite(self) -> Role {
        match self {
            Role::Pick => Role::Place,
            Role::Place => Role::Pick,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Pick => "pick",
            Role::Place => "place",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An object-agnostic action template, `pick_i` or `place_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActionLabel {
    pub role: Role,
    pub index: u16,
}

impl ActionLabel {
    pub fn pick(index: u16) -> Self {
        ActionLabel {
            role: Role::Pick,
            index,
        }
    }

    pub fn place(index: u16) -> Self {
        ActionLabel {
            role: Role::Place,
            index,
        }
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.role, self.index)
    }
}

/// One observed transition `(src, action, dst)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Step {
    pub src: ObsId,
    pub action: ActionLabel,
    pub dst: ObsId,
}

impl Step {
    pub fn new(src: ObsId, action: ActionLabel, dst: ObsId) -> Self {
        Step { src, action, dst }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub id: ObsId,
    /// Role of the action about to be taken from this observation.
    pub role: Role,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("trace is empty")]
    Empty,
    #[error("observation {obs} is reached by a {incoming} action and left by a {outgoing} action")]
    AlternationViolation { obs: ObsId, incoming: Role, outgoing: Role },
    #[error("observation {obs} is left by actions of both roles")]
    MixedOutgoing { obs: ObsId },
    #[error("observation {obs} is reached by actions of both roles")]
    MixedIncoming { obs: ObsId },
    #[error("observation {0} has neither incoming nor outgoing steps")]
    DanglingObservation(ObsId),
    #[error("step {step} is a self-loop on observation {obs}")]
    SelfLoop { step: usize, obs: ObsId },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io: {0}")]
    Io(String),
}

/// A validated trace: steps plus the per-observation roles derived from them.
///
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    steps: Vec<Step>,
    roles: Vec<Role>,
}

/// Builds a [`Trace`] from raw steps, deriving each observation's role.
///
/// An observation takes the role of its outgoing action; an observation
/// without outgoing steps takes the role opposite to its incoming action.
pub fn assign_roles(raw: &[Step]) -> Result<Trace, TraceError> {
    if raw.is_empty() {
        return Err(TraceError::Empty);
    }
    let n = raw.iter().map(|s| s.src.max(s.dst)).max().unwrap_or(0) + 1;
    let mut outgoing: Vec<Option<Role>> = vec![None; n];
    let mut incoming: Vec<Option<Role>> = vec![None; n];
    for (t, step) in raw.iter().enumerate() {
        if step.src == step.dst {
            return Err(TraceError::SelfLoop { step: t, obs: step.src });
        }
        let role = step.action.role;
        match outgoing[step.src] {
            Some(r) if r != role => return Err(TraceError::MixedOutgoing { obs: step.src }),
            _ => outgoing[step.src] = Some(role),
        }
        match incoming[step.dst] {
            Some(r) if r != role => return Err(TraceError::MixedIncoming { obs: step.dst }),
            _ => incoming[step.dst] = Some(role),
        }
    }
    let mut roles = Vec::with_capacity(n);
    for obs in 0..n {
        let role = match (incoming[obs], outgoing[obs]) {
            (Some(inc), Some(out)) => {
                if inc == out {
                    return Err(TraceError::AlternationViolation {
                        obs,
                        incoming: inc,
                        outgoing: out,
                    });
                }
                out
            }
            (None, Some(out)) => out,
            (Some(inc), None) => inc.opposite(),
            (None, None) => return Err(TraceError::DanglingObservation(obs)),
        };
        roles.push(role);
    }
    Ok(Trace {
        steps: raw.to_vec(),
        roles,
    })
}

impl Trace {
    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn num_observations(&self) -> usize {
        self.roles.len()
    }

    pub fn role(&self, obs: ObsId) -> Role {
        self.roles[obs]
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn observations(&self) -> impl Iterator<Item = Observation> + '_ {
        self.roles
            .iter()
            .enumerate()
            .map(|(id, &role)| Observation { id, role })
    }

    /// Ids of all observations with the given role, ascending.
    pub fn ids_with_role(&self, role: Role) -> Vec<ObsId> {
        (0..self.roles.len()).filter(|&o| self.roles[o] == role).collect()
    }

    /// Writes the trace as JSON lines, one step per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), TraceError> {
        for step in &self.steps {
            let line = serde_json::to_string(step).map_err(|e| TraceError::Io(e.to_string()))?;
            writeln!(out, "{line}").map_err(|e| TraceError::Io(e.to_string()))?;
        }
        Ok(())
    }

    /// Reads JSON-lines steps and validates them with [`assign_roles`].
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Trace, TraceError> {
        let mut steps = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| TraceError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let step: Step = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            steps.push(step);
        }
        assign_roles(&steps)
    }
}

/// Adjacency of a trace, indexed by observation id.
#[derive(Debug, Clone)]
pub struct TraceIndex {
    pub outgoing: Vec<Vec<(ActionLabel, ObsId)>>,
    pub incoming: Vec<Vec<(ObsId, ActionLabel)>>,
}

impl TraceIndex {
    pub fn new(trace: &Trace) -> Self {
        let n = trace.num_observations();
        let mut outgoing = vec![Vec::new(); n];
        let mut incoming = vec![Vec::new(); n];
        for s in trace.steps() {
            outgoing[s.src].push((s.action, s.dst));
            incoming[s.dst].push((s.src, s.action));
        }
        TraceIndex { outgoing, incoming }
    }
}
