//! Synthetic rearrangement environments with enumerable ground truth.
//!
//! Objects sit in stacks on three well-separated regions. A pick removes the
//! top object of a region, a place puts the held object on top of a region.
//! Action templates are region-indexed: `pick_{r*cap + h-1}` picks from region
//! `r` at height `h`, `place_{r*cap + h-1}` places to become height `h`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::otdist::SpatialMap;
use crate::trace::{assign_roles, ActionLabel, ObsId, Role, Step, Trace};

pub const NUM_REGIONS: usize = 3;
const MAX_RESTARTS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvError {
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("need at least 4 observations, got {0}")]
    TooFewObservations(usize),
    #[error("walk did not visit every class after {0} restarts")]
    CoverageFailure(usize),
    #[error("unknown state {0}")]
    UnknownState(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    FruitHom,
    FruitHet,
    Blocks2,
    Blocks3,
}

impl EnvKind {
    pub const ALL: [EnvKind; 4] = [EnvKind::FruitHom, EnvKind::FruitHet, EnvKind::Blocks2, EnvKind::Blocks3];

    /// Maximum stack height per region.
    pub fn capacity(self) -> usize {
        match self {
            EnvKind::FruitHom | EnvKind::FruitHet => 1,
            EnvKind::Blocks2 => 2,
            EnvKind::Blocks3 => 3,
        }
    }

    pub fn num_objects(self) -> usize {
        match self {
            EnvKind::Blocks3 => 3,
            _ => 2,
        }
    }

    pub fn num_actions(self) -> usize {
        2 * NUM_REGIONS * self.capacity()
    }

    /// Number of observations in the reference dataset for this kind.
    pub fn default_observations(self) -> usize {
        match self {
            EnvKind::FruitHom | EnvKind::FruitHet => 30,
            EnvKind::Blocks2 => 45,
            EnvKind::Blocks3 => 150,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::FruitHom => "fruit_hom",
            EnvKind::FruitHet => "fruit_het",
            EnvKind::Blocks2 => "blocks2",
            EnvKind::Blocks3 => "blocks3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    /// Grid height and width in cells.
    #[serde(default = "default_grid")]
    pub grid: [usize; 2],
    #[serde(default)]
    pub seed: u64,
    /// Dataset size; defaults to the kind's reference size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_obs: Option<usize>,
}

fn default_grid() -> [usize; 2] {
    [64, 64]
}

impl EnvSpec {
    pub fn new(kind: EnvKind, seed: u64) -> Self {
        EnvSpec {
            kind,
            grid: default_grid(),
            seed,
            n_obs: None,
        }
    }

    pub fn observations(&self) -> usize {
        self.n_obs.unwrap_or_else(|| self.kind.default_observations())
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let [h, w] = self.grid;
        if h < 32 || w < 32 {
            return Err(EnvError::InvalidSpec(format!("grid {h}x{w} is smaller than 32x32")));
        }
        if let Some(n) = self.n_obs {
            if n < 4 {
                return Err(EnvError::TooFewObservations(n));
            }
        }
        Ok(())
    }
}

/// Stacks per region (bottom to top, object ids) plus the held object.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Config {
    pub stacks: Vec<Vec<u8>>,
    pub held: Option<u8>,
}

impl Config {
    pub fn role(&self) -> Role {
        if self.held.is_some() {
            Role::Place
        } else {
            Role::Pick
        }
    }

    pub fn heights(&self) -> Vec<usize> {
        self.stacks.iter().map(Vec::len).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    /// (row, col) in continuous grid coordinates.
    pub center: (f64, f64),
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderParams {
    pub sigma: f64,
    pub jitter_radius: f64,
    pub h: usize,
    pub w: usize,
    /// Fixed scene blob that every map contains. Maps are normalized, so without it
    /// only relative stack heights would be visible.
    pub landmark: (f64, f64),
    pub landmark_mass: f64,
}

/// Abstract class of a configuration: object identities erased.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClassKey {
    pub role: Role,
    pub heights: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct GroundTruthEnv {
    pub spec: EnvSpec,
    pub states: Vec<Config>,
    pub actions: Vec<ActionLabel>,
    /// Per state, applicable actions and their successor states, sorted by label.
    pub transitions: Vec<Vec<(ActionLabel, usize)>>,
    pub regions: Vec<Region>,
    pub render: RenderParams,
    pub classes: Vec<ClassKey>,
    class_of: Vec<usize>,
    pub initial: usize,
}

fn initial_config(kind: EnvKind) -> Config {
    let stacks = match kind {
        EnvKind::FruitHom | EnvKind::Blocks2 => vec![vec![0], vec![0], vec![]],
        EnvKind::FruitHet => vec![vec![0], vec![1], vec![]],
        EnvKind::Blocks3 => vec![vec![0], vec![0], vec![0]],
    };
    Config { stacks, held: None }
}

fn successors(kind: EnvKind, s: &Config) -> Vec<(ActionLabel, Config)> {
    let cap = kind.capacity();
    let mut out = Vec::new();
    for r in 0..NUM_REGIONS {
        let h = s.stacks[r].len();
        match s.held {
            None if h > 0 => {
                let mut next = s.clone();
                let obj = next.stacks[r].pop();
                next.held = obj;
                out.push((ActionLabel::pick((r * cap + h - 1) as u16), next));
            }
            Some(obj) if h < cap => {
                let mut next = s.clone();
                next.stacks[r].push(obj);
                next.held = None;
                out.push((ActionLabel::place((r * cap + h) as u16), next));
            }
            _ => {}
        }
    }
    out.sort_by_key(|a| a.0);
    out
}

/// Enumerates the reachable state space of `spec` by breadth-first closure.
pub fn build_env(spec: &EnvSpec) -> Result<GroundTruthEnv, EnvError> {
    spec.validate()?;
    let kind = spec.kind;
    let mut index: BTreeMap<Config, usize> = BTreeMap::new();
    let mut states = Vec::new();
    let mut queue = VecDeque::new();
    let init = initial_config(kind);
    index.insert(init.clone(), 0);
    states.push(init.clone());
    queue.push_back(init);
    let mut raw_transitions: Vec<Vec<(ActionLabel, Config)>> = Vec::new();
    while let Some(s) = queue.pop_front() {
        let succ = successors(kind, &s);
        for (_, next) in &succ {
            if !index.contains_key(next) {
                index.insert(next.clone(), states.len());
                states.push(next.clone());
                queue.push_back(next.clone());
            }
        }
        raw_transitions.push(succ);
    }
    let transitions = raw_transitions
        .into_iter()
        .map(|succ| succ.into_iter().map(|(a, n)| (a, index[&n])).collect())
        .collect();

    let keys: BTreeSet<ClassKey> = states
        .iter()
        .map(|s| ClassKey {
            role: s.role(),
            heights: s.heights(),
        })
        .collect();
    let classes: Vec<ClassKey> = keys.into_iter().collect();
    let class_of = states
        .iter()
        .map(|s| {
            let key = ClassKey {
                role: s.role(),
                heights: s.heights(),
            };
            classes.binary_search(&key).expect("class enumerated above")
        })
        .collect();

    let cap = kind.capacity();
    let actions = (0..NUM_REGIONS * cap)
        .map(|i| ActionLabel::pick(i as u16))
        .chain((0..NUM_REGIONS * cap).map(|i| ActionLabel::place(i as u16)))
        .collect();

    let [h, w] = spec.grid;
    let scale = h.min(w) as f64 / 64.0;
    let render = RenderParams {
        sigma: 2.5 * scale,
        jitter_radius: 4.0 * scale,
        h,
        w,
        landmark: (h as f64 / 2.0, w as f64 / 2.0),
        landmark_mass: 1.0,
    };
    // Two regions along the top edge and one centered at the bottom, 12 cells in from the border.
    let (sy, sx) = (h as f64 / 64.0, w as f64 / 64.0);
    let regions = [(12.0, 12.0), (12.0, 52.0), (52.0, 32.0)]
        .iter()
        .map(|&(y, x)| Region {
            center: (y * sy, x * sx),
            radius: render.jitter_radius,
        })
        .collect();

    Ok(GroundTruthEnv {
        spec: spec.clone(),
        states,
        actions,
        transitions,
        regions,
        render,
        classes,
        class_of,
        initial: 0,
    })
}

impl GroundTruthEnv {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_of(&self, state: usize) -> usize {
        self.class_of[state]
    }

    pub fn role_of(&self, state: usize) -> Role {
        self.states[state].role()
    }

    pub fn class_role(&self, class: usize) -> Role {
        self.classes[class].role
    }

    /// Deterministic transition function; `None` when the action is not applicable.
    pub fn step(&self, state: usize, action: ActionLabel) -> Option<usize> {
        self.transitions
            .get(state)?
            .iter()
            .find(|(a, _)| *a == action)
            .map(|&(_, n)| n)
    }

    /// The abstract ground-truth graph over classes.
    pub fn class_graph(&self) -> BTreeSet<(usize, ActionLabel, usize)> {
        let mut edges = BTreeSet::new();
        for (s, succ) in self.transitions.iter().enumerate() {
            for &(a, n) in succ {
                edges.insert((self.class_of[s], a, self.class_of[n]));
            }
        }
        edges
    }

    /// Renders a state to a spatial map with jitter drawn from `seed`.
    pub fn render_map(&self, state: usize, seed: u64) -> Result<SpatialMap, EnvError> {
        let config = self.states.get(state).ok_or(EnvError::UnknownState(state))?;
        let RenderParams {
            sigma,
            jitter_radius,
            h,
            w,
            landmark,
            landmark_mass,
        } = self.render;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; h * w];
        let mut add_blob = |(cy, cx): (f64, f64), width: f64, mass: f64| {
            let blob: Vec<f64> = (0..h * w)
                .map(|k| {
                    let dy = (k / w) as f64 + 0.5 - cy;
                    let dx = (k % w) as f64 + 0.5 - cx;
                    (-(dy * dy + dx * dx) / (2.0 * width * width)).exp()
                })
                .collect();
            let total: f64 = blob.iter().sum();
            for (acc, b) in values.iter_mut().zip(&blob) {
                *acc += mass * b / total;
            }
        };
        add_blob(landmark, sigma, landmark_mass);
        for (r, stack) in config.stacks.iter().enumerate() {
            if stack.is_empty() {
                continue;
            }
            let rho = jitter_radius * rng.gen::<f64>().sqrt();
            let theta = 2.0 * PI * rng.gen::<f64>();
            let (cy, cx) = self.regions[r].center;
            // Distinct fruit differ in spread only; stacked blocks add mass at one spot.
            let width = match self.spec.kind {
                EnvKind::FruitHet if stack[0] == 1 => 1.4 * sigma,
                _ => sigma,
            };
            add_blob(
                (cy + rho * theta.sin(), cx + rho * theta.cos()),
                width,
                stack.len() as f64,
            );
        }
        Ok(SpatialMap::from_weights(h, w, values).expect("rendered map has positive mass"))
    }
}

/// Stable per-observation render seed.
pub fn render_seed(seed: u64, obs: ObsId) -> u64 {
    splitmix(seed ^ splitmix(obs as u64 ^ 0x9e37_79b9_7f4a_7c15))
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// A sampled walk: the trace plus the hidden state behind each observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrace {
    pub trace: Trace,
    pub states: Vec<usize>,
    pub restarts: usize,
}

impl SampledTrace {
    pub fn classes(&self, env: &GroundTruthEnv) -> Vec<usize> {
        self.states.iter().map(|&s| env.class_of(s)).collect()
    }
}

/// Random walk of `n_obs` observations from the initial state that visits every class.
pub fn sample_trace(env: &GroundTruthEnv, n_obs: usize, seed: u64) -> Result<SampledTrace, EnvError> {
    if n_obs < 4 {
        return Err(EnvError::TooFewObservations(n_obs));
    }
    for attempt in 0..MAX_RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed.wrapping_add(attempt as u64)));
        let mut states = vec![env.initial];
        let mut steps = Vec::with_capacity(n_obs - 1);
        while states.len() < n_obs {
            let cur = *states.last().expect("walk is non-empty");
            let options = &env.transitions[cur];
            let (action, next) = options[rng.gen_range(0..options.len())];
            steps.push(Step::new(states.len() - 1, action, states.len()));
            states.push(next);
        }
        let seen: BTreeSet<usize> = states.iter().map(|&s| env.class_of(s)).collect();
        if seen.len() == env.num_classes() {
            let trace = assign_roles(&steps).expect("walk alternates roles");
            return Ok(SampledTrace {
                trace,
                states,
                restarts: attempt,
            });
        }
    }
    Err(EnvError::CoverageFailure(MAX_RESTARTS))
}

/// Everything a synthetic experiment needs: walk, hidden states, and maps.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub env: GroundTruthEnv,
    pub sampled: SampledTrace,
    pub maps: Vec<SpatialMap>,
    pub render_seeds: Vec<u64>,
}

impl Dataset {
    pub fn trace(&self) -> &Trace {
        &self.sampled.trace
    }

    pub fn classes(&self) -> Vec<usize> {
        self.sampled.classes(&self.env)
    }
}

/// Builds the environment, samples a walk, and renders every observation.
pub fn generate_dataset(spec: &EnvSpec) -> Result<Dataset, EnvError> {
    let env = build_env(spec)?;
    let sampled = sample_trace(&env, spec.observations(), spec.seed)?;
    let render_seeds: Vec<u64> = (0..sampled.states.len()).map(|o| render_seed(spec.seed, o)).collect();
    let maps = sampled
        .states
        .par_iter()
        .zip(render_seeds.par_iter())
        .map(|(&s, &rs)| env.render_map(s, rs))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        env,
        sampled,
        maps,
        render_seeds,
    })
}
