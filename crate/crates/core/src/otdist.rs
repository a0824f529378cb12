//! Entropic optimal transport between spatial probability maps.
//!
//! Distances are debiased Sinkhorn divergences
//! `S(p, q) = OT(p, q) - OT(p, p) / 2 - OT(q, q) / 2`, where `OT` is the
//! entropically regularized transport cost with Euclidean ground cost between
//! pixel centers. The solver runs Sinkhorn scaling iterations on a kernel whose
//! dual potentials are periodically absorbed into log-domain offsets, which keeps
//! the iterations stable for small regularization.

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::partition::Partition;
use crate::trace::{ObsId, Role};

/// Mass below this value is treated as background and removed.
pub const MASS_FLOOR: f64 = 1e-8;
const MASS_TOL: f64 = 1e-9;
const ABSORB_LOG: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OtError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("maps live on different grids: {0:?} vs {1:?}")]
    GridMismatch((usize, usize), (usize, usize)),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("pair ({i}, {j}): {source}")]
    Pair {
        i: ObsId,
        j: ObsId,
        #[source]
        source: Box<OtError>,
    },
    #[error("need at least two maps")]
    TooFewMaps,
    #[error("csv: {0}")]
    Csv(String),
}

/// Non-negative mass on an `h x w` grid summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialMap {
    h: usize,
    w: usize,
    values: Vec<f64>,
}

impl SpatialMap {
    /// Wraps values that must already form a distribution.
    pub fn new(h: usize, w: usize, values: Vec<f64>) -> Result<Self, OtError> {
        if h == 0 || w == 0 || values.len() != h * w {
            return Err(OtError::InvalidDistribution(format!(
                "expected {}x{} values, got {}",
                h,
                w,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(OtError::InvalidDistribution(format!(
                "entry {v} is negative or not finite"
            )));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(OtError::InvalidDistribution(format!("total mass {total} != 1")));
        }
        Ok(SpatialMap { h, w, values })
    }

    /// Normalizes non-negative weights into a distribution, dropping mass below [`MASS_FLOOR`].
    pub fn from_weights(h: usize, w: usize, mut values: Vec<f64>) -> Result<Self, OtError> {
        if values.len() != h * w {
            return Err(OtError::InvalidDistribution("shape mismatch".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(OtError::InvalidDistribution("negative or non-finite weight".into()));
        }
        for _ in 0..2 {
            let total: f64 = values.iter().sum();
            if total <= 0.0 {
                return Err(OtError::InvalidDistribution("zero total mass".into()));
            }
            for v in values.iter_mut() {
                *v /= total;
                if *v < MASS_FLOOR {
                    *v = 0.0;
                }
            }
        }
        let total: f64 = values.iter().sum();
        values.iter_mut().for_each(|v| *v /= total);
        SpatialMap::new(h, w, values)
    }

    pub fn point_mass(h: usize, w: usize, row: usize, col: usize) -> Self {
        let mut values = vec![0.0; h * w];
        values[row * w + col] = 1.0;
        SpatialMap { h, w, values }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.w + col]
    }

    /// Block-mean pooling onto a `side x side` grid (rows and columns binned
    /// proportionally), followed by renormalization.
    pub fn downsample(&self, side: usize) -> SpatialMap {
        if side >= self.h && side >= self.w {
            return self.clone();
        }
        let (oh, ow) = (side.min(self.h), side.min(self.w));
        let mut sums = vec![0.0; oh * ow];
        let mut counts = vec![0usize; oh * ow];
        for r in 0..self.h {
            let br = r * oh / self.h;
            for c in 0..self.w {
                let bc = c * ow / self.w;
                sums[br * ow + bc] += self.values[r * self.w + c];
                counts[br * ow + bc] += 1;
            }
        }
        let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect();
        let total: f64 = means.iter().sum();
        SpatialMap {
            h: oh,
            w: ow,
            values: means.into_iter().map(|v| v / total).collect(),
        }
    }

    /// Writes `h` lines of `w` comma-separated values.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in 0..self.h {
            let row: Vec<String> = self.values[r * self.w..(r + 1) * self.w]
                .iter()
                .map(|v| v.to_string())
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, OtError> {
        let mut values = Vec::new();
        let mut h = 0;
        let mut w = None;
        for line in input.lines() {
            let line = line.map_err(|e| OtError::Csv(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| OtError::Csv(e.to_string()))?;
            match w {
                None => w = Some(row.len()),
                Some(w) if w != row.len() => return Err(OtError::Csv("ragged rows".into())),
                _ => {}
            }
            values.extend(row);
            h += 1;
        }
        let w = w.ok_or_else(|| OtError::Csv("empty map".into()))?;
        // Text round-trips can drift by an ulp or two; renormalize before validating.
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() < 1e-6 && total > 0.0 {
            values.iter_mut().for_each(|v| *v /= total);
        }
        SpatialMap::new(h, w, values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Epsilon {
    /// Fraction of the grid diagonal.
    Relative(f64),
    Absolute(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OTParams {
    pub epsilon: Epsilon,
    pub max_iters: usize,
    /// Stop once the L1 marginal violation falls below this.
    pub tol: f64,
    /// Side length of the grid the maps are pooled onto before transport.
    pub downsample: usize,
}

impl Default for OTParams {
    fn default() -> Self {
        OTParams {
            epsilon: Epsilon::Relative(0.05),
            max_iters: 500,
            tol: 1e-6,
            downsample: 16,
        }
    }
}

impl OTParams {
    pub fn validate(&self) -> Result<(), OtError> {
        let eps = match self.epsilon {
            Epsilon::Relative(e) | Epsilon::Absolute(e) => e,
        };
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(OtError::InvalidParams(format!("epsilon must be positive, got {eps}")));
        }
        if self.max_iters == 0 {
            return Err(OtError::InvalidParams("max_iters must be at least 1".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(OtError::InvalidParams("tol must be positive".into()));
        }
        if self.downsample == 0 {
            return Err(OtError::InvalidParams("downsample must be at least 1".into()));
        }
        Ok(())
    }

    /// Absolute regularization for maps on an `h x w` grid.
    pub fn epsilon_for(&self, h: usize, w: usize) -> f64 {
        match self.epsilon {
            Epsilon::Relative(r) => r * ((h * h + w * w) as f64).sqrt(),
            Epsilon::Absolute(a) => a,
        }
    }
}

/// Weighted points with positive mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Support {
    pub points: Vec<(f64, f64)>,
    pub weights: Vec<f64>,
}

impl Support {
    pub fn from_map(map: &SpatialMap) -> Self {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (k, &v) in map.values.iter().enumerate() {
            if v > 0.0 {
                points.push(((k / map.w) as f64, (k % map.w) as f64));
                weights.push(v);
            }
        }
        Support { points, weights }
    }

    fn canonical_cmp(&self, other: &Support) -> Ordering {
        self.weights
            .len()
            .cmp(&other.weights.len())
            .then_with(|| {
                self.weights
                    .iter()
                    .zip(&other.weights)
                    .map(|(a, b)| a.total_cmp(b))
                    .find(|o| o.is_ne())
                    .unwrap_or(Ordering::Equal)
            })
            .then_with(|| {
                self.points
                    .iter()
                    .zip(&other.points)
                    .map(|(a, b)| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)))
                    .find(|o| o.is_ne())
                    .unwrap_or(Ordering::Equal)
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtValue {
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Entropic transport cost `min <P, C> + eps KL(P | a x b)` between two supports.
///
/// The regularization is annealed from the largest cost down to `eps`, halving each
/// stage and warm-starting the potentials; `max_iters` and `tol` govern the final stage.
pub fn entropic_ot(a: &Support, b: &Support, eps: f64, max_iters: usize, tol: f64) -> OtValue {
    let (n, m) = (a.weights.len(), b.weights.len());
    let cost: Vec<f64> = a
        .points
        .iter()
        .flat_map(|&p| b.points.iter().map(move |&q| euclid(p, q)))
        .collect();

    // c-transform initialization: every row and column of the kernel has an entry equal to one.
    let mut f: Vec<f64> = (0..n)
        .map(|i| cost[i * m..(i + 1) * m].iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let mut g: Vec<f64> = (0..m)
        .map(|j| (0..n).map(|i| cost[i * m + j] - f[i]).fold(f64::INFINITY, f64::min))
        .collect();

    let c_max = cost.iter().copied().fold(0.0, f64::max);
    let mut schedule = Vec::new();
    let mut e = c_max;
    while e > 2.0 * eps {
        schedule.push(e);
        e *= 0.5;
    }
    schedule.push(eps);

    let mut scaling = Scaling::new(n, m);
    let mut converged = false;
    let mut iterations = 0;
    for (k, &e) in schedule.iter().enumerate() {
        let last = k + 1 == schedule.len();
        let (budget, stage_tol) = if last {
            (max_iters, tol)
        } else {
            (ANNEAL_ITERS, tol.max(ANNEAL_TOL))
        };
        let (ok, iters) = scaling.run(&cost, a, b, &mut f, &mut g, e, budget, stage_tol);
        iterations += iters;
        if last {
            converged = ok;
        } else {
            scaling.absorb(&mut f, &mut g, e);
        }
    }

    // Dual value with potentials F = f + eps ln(u / a), G = g + eps ln(v / b); the
    // plan has exact row marginals here, so the exponential term of the dual vanishes.
    let fa: f64 = (0..n)
        .map(|i| a.weights[i] * (f[i] + eps * (scaling.u[i] / a.weights[i]).ln()))
        .sum();
    let gb: f64 = (0..m)
        .map(|j| b.weights[j] * (g[j] + eps * (scaling.v[j] / b.weights[j]).ln()))
        .sum();
    OtValue {
        cost: fa + gb,
        converged,
        iterations,
    }
}

/// Symmetric transport cost `OT(a, a)`, by the averaged fixed-point iteration on a
/// single potential, which converges much faster than alternating scaling here.
pub fn self_ot(a: &Support, eps: f64, max_iters: usize, tol: f64) -> OtValue {
    let n = a.weights.len();
    let cost: Vec<f64> = a
        .points
        .iter()
        .flat_map(|&p| a.points.iter().map(move |&q| euclid(p, q)))
        .collect();
    let log_a: Vec<f64> = a.weights.iter().map(|w| w.ln()).collect();
    let mut f = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut terms = vec![0.0; n];
    // t_i = -eps log sum_j a_j exp((f_j - C_ij) / eps)
    let transform = |f: &[f64], t: &mut [f64], terms: &mut [f64]| {
        for i in 0..n {
            let row = &cost[i * n..(i + 1) * n];
            let mut hi = f64::NEG_INFINITY;
            for j in 0..n {
                terms[j] = log_a[j] + (f[j] - row[j]) / eps;
                hi = hi.max(terms[j]);
            }
            let s: f64 = terms.iter().map(|x| (x - hi).exp()).sum();
            t[i] = -eps * (hi + s.ln());
        }
    };
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..max_iters {
        iterations = it + 1;
        transform(&f, &mut t, &mut terms);
        // At a fixed point f = t; the row marginal of the plan is a_i exp((f_i - t_i) / eps).
        let err: f64 = (0..n)
            .map(|i| a.weights[i] * (((f[i] - t[i]) / eps).exp() - 1.0).abs())
            .sum();
        if err < tol {
            converged = true;
            break;
        }
        for i in 0..n {
            f[i] = 0.5 * (f[i] + t[i]);
        }
    }
    let value: f64 = (0..n).map(|i| a.weights[i] * f[i]).sum();
    OtValue {
        cost: 2.0 * value,
        converged,
        iterations,
    }
}

const ANNEAL_ITERS: usize = 50;
const ANNEAL_TOL: f64 = 1e-3;

/// Scaling vectors and kernel for the stabilized iterations. The current plan is
/// `u_i exp((f_i + g_j - C_ij) / eps) v_j`.
struct Scaling {
    u: Vec<f64>,
    v: Vec<f64>,
    kernel: Vec<f64>,
    col: Vec<f64>,
}

impl Scaling {
    fn new(n: usize, m: usize) -> Self {
        Scaling {
            u: vec![1.0; n],
            v: vec![1.0; m],
            kernel: vec![0.0; n * m],
            col: vec![0.0; m],
        }
    }

    fn build_kernel(&mut self, cost: &[f64], f: &[f64], g: &[f64], eps: f64) {
        let m = g.len();
        for (i, fi) in f.iter().enumerate() {
            let row = &cost[i * m..(i + 1) * m];
            let out = &mut self.kernel[i * m..(i + 1) * m];
            for j in 0..m {
                out[j] = ((fi + g[j] - row[j]) / eps).exp();
            }
        }
    }

    fn absorb(&mut self, f: &mut [f64], g: &mut [f64], eps: f64) {
        for (fi, ui) in f.iter_mut().zip(self.u.iter_mut()) {
            *fi += eps * ui.ln();
            *ui = 1.0;
        }
        for (gj, vj) in g.iter_mut().zip(self.v.iter_mut()) {
            *gj += eps * vj.ln();
            *vj = 1.0;
        }
    }

    /// Runs up to `budget` iterations; returns whether the column marginal error fell below `tol`.
    #[allow(clippy::too_many_arguments)]
    fn run(
        &mut self,
        cost: &[f64],
        a: &Support,
        b: &Support,
        f: &mut [f64],
        g: &mut [f64],
        eps: f64,
        budget: usize,
        tol: f64,
    ) -> (bool, usize) {
        let (n, m) = (f.len(), g.len());
        self.build_kernel(cost, f, g, eps);
        for it in 0..budget {
            for i in 0..n {
                let row = &self.kernel[i * m..(i + 1) * m];
                let s: f64 = row.iter().zip(&self.v).map(|(k, v)| k * v).sum();
                self.u[i] = a.weights[i] / s;
            }
            self.col.iter_mut().for_each(|c| *c = 0.0);
            for i in 0..n {
                let ui = self.u[i];
                let row = &self.kernel[i * m..(i + 1) * m];
                for (c, k) in self.col.iter_mut().zip(row) {
                    *c += k * ui;
                }
            }
            let err: f64 = (0..m).map(|j| (self.v[j] * self.col[j] - b.weights[j]).abs()).sum();
            if err < tol {
                return (true, it + 1);
            }
            for j in 0..m {
                self.v[j] = b.weights[j] / self.col[j];
            }
            let unstable = self
                .u
                .iter()
                .chain(self.v.iter())
                .any(|x| !x.is_finite() || x.ln().abs() > ABSORB_LOG);
            if unstable {
                self.absorb(f, g, eps);
                self.build_kernel(cost, f, g, eps);
            }
        }
        (false, budget)
    }
}

/// Result of a divergence evaluation. `converged` is false if any of the three
/// transport problems hit `max_iters` before reaching `tol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    pub value: f64,
    pub converged: bool,
}

fn check_params(p: &SpatialMap, q: &SpatialMap, params: &OTParams) -> Result<f64, OtError> {
    params.validate()?;
    if p.shape() != q.shape() {
        return Err(OtError::GridMismatch(p.shape(), q.shape()));
    }
    Ok(params.epsilon_for(p.h, p.w))
}

fn divergence_from_parts(
    a: &Support,
    b: &Support,
    self_a: OtValue,
    self_b: OtValue,
    eps: f64,
    params: &OTParams,
) -> Divergence {
    // Arguments are put in a canonical order so the result is exactly symmetric.
    let (first, second, s1, s2) = if a.canonical_cmp(b).is_gt() {
        (b, a, self_b, self_a)
    } else {
        (a, b, self_a, self_b)
    };
    if first.canonical_cmp(second).is_eq() {
        return Divergence {
            value: 0.0,
            converged: true,
        };
    }
    let cross = entropic_ot(first, second, eps, params.max_iters, params.tol);
    let value = cross.cost - 0.5 * s1.cost - 0.5 * s2.cost;
    Divergence {
        value: value.max(0.0),
        converged: cross.converged && s1.converged && s2.converged,
    }
}

/// Debiased Sinkhorn divergence between two maps on the same grid (no downsampling).
pub fn sinkhorn_divergence(p: &SpatialMap, q: &SpatialMap, params: &OTParams) -> Result<Divergence, OtError> {
    let eps = check_params(p, q, params)?;
    let (a, b) = (Support::from_map(p), Support::from_map(q));
    let self_a = self_ot(&a, eps, params.max_iters, params.tol);
    let self_b = self_ot(&b, eps, params.max_iters, params.tol);
    Ok(divergence_from_parts(&a, &b, self_a, self_b, eps, params))
}

/// Symmetric pairwise distances with zero diagonal, indexed by observation id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    ids: Vec<ObsId>,
    values: Vec<f64>,
    /// Number of pairs whose transport problems did not reach tolerance.
    pub nonconverged: usize,
}

impl DistanceMatrix {
    /// Builds a matrix from a dense row-major array; symmetrizes and zeroes the diagonal.
    pub fn from_dense(ids: Vec<ObsId>, mut values: Vec<f64>) -> Result<Self, OtError> {
        let n = ids.len();
        if values.len() != n * n {
            return Err(OtError::Csv(format!(
                "expected {} entries, got {}",
                n * n,
                values.len()
            )));
        }
        for i in 0..n {
            values[i * n + i] = 0.0;
            for j in (i + 1)..n {
                let v = values[i * n + j].max(0.0);
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        Ok(DistanceMatrix {
            ids,
            values,
            nonconverged: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[ObsId] {
        &self.ids
    }

    /// Entry by matrix index.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ids.len() + j]
    }

    pub fn index_of(&self, id: ObsId) -> Option<usize> {
        if self.ids.get(id) == Some(&id) {
            Some(id)
        } else {
            self.ids.iter().position(|&x| x == id)
        }
    }

    /// Entry by observation id. Panics if an id is missing.
    pub fn by_id(&self, a: ObsId, b: ObsId) -> f64 {
        let i = self.index_of(a).expect("observation not in distance matrix");
        let j = self.index_of(b).expect("observation not in distance matrix");
        self.get(i, j)
    }

    /// Dense lookup table indexed by observation id, covering ids `0..n_obs`.
    pub fn dense_by_id(&self, n_obs: usize) -> Result<Vec<f64>, OtError> {
        let mut pos = vec![usize::MAX; n_obs];
        for (i, &id) in self.ids.iter().enumerate() {
            if id < n_obs {
                pos[id] = i;
            }
        }
        if let Some(missing) = pos.iter().position(|&p| p == usize::MAX) {
            return Err(OtError::InvalidParams(format!(
                "observation {missing} missing from distance matrix"
            )));
        }
        let mut out = vec![0.0; n_obs * n_obs];
        for a in 0..n_obs {
            for b in 0..n_obs {
                out[a * n_obs + b] = self.get(pos[a], pos[b]);
            }
        }
        Ok(out)
    }

    /// Restriction to a subset of ids, in the given order.
    pub fn restrict(&self, ids: &[ObsId]) -> DistanceMatrix {
        let idx: Vec<usize> = ids.iter().map(|&id| self.index_of(id).expect("unknown id")).collect();
        let values = idx
            .iter()
            .flat_map(|&i| idx.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        DistanceMatrix {
            ids: ids.to_vec(),
            values,
            nonconverged: 0,
        }
    }

    /// Median of the off-diagonal entries; falls back to 1 when that is not positive.
    pub fn median_off_diagonal(&self) -> f64 {
        let n = self.len();
        let mut vals: Vec<f64> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        if vals.is_empty() {
            return 1.0;
        }
        vals.sort_by(f64::total_cmp);
        let mid = vals.len() / 2;
        let median = if vals.len().is_multiple_of(2) {
            0.5 * (vals[mid - 1] + vals[mid])
        } else {
            vals[mid]
        };
        if median > 0.0 {
            median
        } else {
            vals.iter().copied().find(|v| *v > 0.0).unwrap_or(1.0)
        }
    }

    /// CSV with a header row of observation ids followed by one row per id.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = self.ids.iter().map(|id| id.to_string()).collect();
        writeln!(out, "{}", header.join(","))?;
        let n = self.len();
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| self.get(i, j).to_string()).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, OtError> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| OtError::Csv("missing header".into()))?
            .map_err(|e| OtError::Csv(e.to_string()))?;
        let ids: Result<Vec<ObsId>, _> = header.split(',').map(|s| s.trim().parse::<ObsId>()).collect();
        let ids = ids.map_err(|e| OtError::Csv(e.to_string()))?;
        let mut values = Vec::with_capacity(ids.len() * ids.len());
        for line in lines {
            let line = line.map_err(|e| OtError::Csv(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            for s in line.split(',') {
                values.push(s.trim().parse::<f64>().map_err(|e| OtError::Csv(e.to_string()))?);
            }
        }
        DistanceMatrix::from_dense(ids, values)
    }
}

/// Pairwise divergences between maps, after pooling each onto the `params.downsample` grid.
/// Map `i` is given observation id `i`.
pub fn distance_matrix(maps: &[SpatialMap], params: &OTParams) -> Result<DistanceMatrix, OtError> {
    params.validate()?;
    if maps.len() < 2 {
        return Err(OtError::TooFewMaps);
    }
    let shape = maps[0].shape();
    if let Some(m) = maps.iter().find(|m| m.shape() != shape) {
        return Err(OtError::GridMismatch(shape, m.shape()));
    }
    let pooled: Vec<SpatialMap> = maps.iter().map(|m| m.downsample(params.downsample)).collect();
    let (h, w) = pooled[0].shape();
    let eps = params.epsilon_for(h, w);
    let supports: Vec<Support> = pooled.iter().map(Support::from_map).collect();
    let selfs: Vec<OtValue> = supports
        .par_iter()
        .map(|s| self_ot(s, eps, params.max_iters, params.tol))
        .collect();
    let n = maps.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    let results: Vec<Divergence> = pairs
        .par_iter()
        .map(|&(i, j)| divergence_from_parts(&supports[i], &supports[j], selfs[i], selfs[j], eps, params))
        .collect();
    let mut values = vec![0.0; n * n];
    let mut nonconverged = 0;
    for (&(i, j), d) in pairs.iter().zip(&results) {
        if !d.value.is_finite() {
            return Err(OtError::Pair {
                i,
                j,
                source: Box::new(OtError::InvalidDistribution("non-finite divergence".into())),
            });
        }
        values[i * n + j] = d.value;
        values[j * n + i] = d.value;
        if !d.converged {
            nonconverged += 1;
        }
    }
    if nonconverged > 0 {
        log::warn!("{nonconverged} of {} pairs did not converge", pairs.len());
    }
    Ok(DistanceMatrix {
        ids: (0..n).collect(),
        values,
        nonconverged,
    })
}

/// Visual affinity `exp(-d / tau)`.
pub fn affinity(d: f64, tau: f64) -> f64 {
    (-d / tau).exp()
}

/// Mean pairwise distance inside each cluster, summed over the clusters of both roles.
pub fn intra_cluster_score(partition: &Partition, d: &DistanceMatrix) -> f64 {
    [Role::Pick, Role::Place]
        .iter()
        .map(|&role| role_score(&partition.members(role), |a, b| d.by_id(a, b)))
        .sum()
}

/// Score of one role's clusters under an arbitrary distance lookup.
pub fn role_score(clusters: &[Vec<ObsId>], dist: impl Fn(ObsId, ObsId) -> f64) -> f64 {
    clusters
        .iter()
        .filter(|c| c.len() > 1)
        .map(|c| {
            let mut sum = 0.0;
            for (x, &a) in c.iter().enumerate() {
                for &b in &c[x + 1..] {
                    sum += dist(a, b);
                }
            }
            let pairs = (c.len() * (c.len() - 1)) as f64 / 2.0;
            sum / pairs
        })
        .sum()
}
