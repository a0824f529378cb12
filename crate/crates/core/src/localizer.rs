//! Assigns novel observations to nodes of a learned graph with a cosine classifier
//! over class prototypes.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::otdist::SpatialMap;
use crate::partition::Partition;
use crate::trace::Role;

pub const DEFAULT_GAMMA: f64 = 0.1;
pub const DEFAULT_FOLDS: usize = 5;
/// Side of the pooled grid whose flattened values form the feature vector. At the
/// default geometry each cell is wider than the jitter disc, so render noise rarely
/// moves mass between cells.
pub const DEFAULT_FEATURE_SIDE: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum LocalizerError {
    #[error("class {0} has no examples")]
    EmptyClass(usize),
    #[error("class {0} has a zero prototype")]
    ZeroPrototype(usize),
    #[error("{maps} maps but {labels} labels")]
    LengthMismatch { maps: usize, labels: usize },
    #[error("observation {0} has no map")]
    MissingMap(usize),
    #[error("feature length {got} does not match the classifier's {expected}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error("temperature must be positive and finite, got {0}")]
    InvalidGamma(f64),
    #[error("need at least two folds, got {0}")]
    InvalidFolds(usize),
}

/// Graph node a class stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeRef {
    pub role: Role,
    pub cluster: usize,
}

/// Flattened pooled map.
pub fn features(map: &SpatialMap, side: usize) -> Vec<f64> {
    map.downsample(side).values().to_vec()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine classifier with temperature `gamma`: `z_k = cos(w_k, x) / gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeClassifier {
    /// Unit-norm class means.
    pub prototypes: Vec<Vec<f64>>,
    pub gamma: f64,
    /// Class index to graph node: pick nodes first, then place nodes.
    pub nodes: Vec<NodeRef>,
    pub feature_side: usize,
    /// SHA-256 of the partition the labels came from, if any.
    pub partition_hash: Option<String>,
}

impl PrototypeClassifier {
    /// Class means of `examples`, where `labels[i]` indexes `0..n_classes`.
    pub fn fit(examples: &[Vec<f64>], labels: &[usize], n_classes: usize, gamma: f64) -> Result<Self, LocalizerError> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(LocalizerError::InvalidGamma(gamma));
        }
        if examples.len() != labels.len() {
            return Err(LocalizerError::LengthMismatch {
                maps: examples.len(),
                labels: labels.len(),
            });
        }
        let dim = examples.first().map_or(0, Vec::len);
        if let Some(x) = examples.iter().find(|x| x.len() != dim) {
            return Err(LocalizerError::FeatureMismatch {
                expected: dim,
                got: x.len(),
            });
        }
        let mut sums = vec![vec![0.0; dim]; n_classes];
        let mut counts = vec![0usize; n_classes];
        for (x, &y) in examples.iter().zip(labels) {
            if y >= n_classes {
                return Err(LocalizerError::EmptyClass(y));
            }
            counts[y] += 1;
            for (s, v) in sums[y].iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut prototypes = Vec::with_capacity(n_classes);
        for (k, (mut s, n)) in sums.into_iter().zip(counts).enumerate() {
            if n == 0 {
                return Err(LocalizerError::EmptyClass(k));
            }
            let len = norm(&s);
            if len == 0.0 {
                return Err(LocalizerError::ZeroPrototype(k));
            }
            s.iter_mut().for_each(|v| *v /= len);
            prototypes.push(s);
        }
        Ok(PrototypeClassifier {
            prototypes,
            gamma,
            nodes: Vec::new(),
            feature_side: DEFAULT_FEATURE_SIDE,
            partition_hash: None,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self, LocalizerError> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(LocalizerError::InvalidGamma(gamma));
        }
        Ok(PrototypeClassifier { gamma, ..self.clone() })
    }

    /// Logits for a feature vector. A zero vector scores zero everywhere.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, LocalizerError> {
        let dim = self.prototypes.first().map_or(0, Vec::len);
        if x.len() != dim {
            return Err(LocalizerError::FeatureMismatch {
                expected: dim,
                got: x.len(),
            });
        }
        let len = norm(x);
        Ok(self
            .prototypes
            .iter()
            .map(|w| {
                if len == 0.0 {
                    0.0
                } else {
                    w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() / len / self.gamma
                }
            })
            .collect())
    }

    /// Highest-scoring class, ties to the smallest index, with all logits.
    pub fn predict(&self, x: &[f64]) -> Result<(usize, Vec<f64>), LocalizerError> {
        let z = self.logits(x)?;
        Ok((argmax(&z), z))
    }

    pub fn classify(&self, map: &SpatialMap) -> Result<(usize, Vec<f64>), LocalizerError> {
        self.predict(&features(map, self.feature_side))
    }

    /// Graph node of the predicted class.
    pub fn localize(&self, map: &SpatialMap) -> Result<NodeRef, LocalizerError> {
        let (k, _) = self.classify(map)?;
        Ok(self.nodes[k])
    }
}

/// First index of the maximum.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = k;
        }
    }
    best
}

/// Class index of every node of `partition`, pick nodes first.
pub fn node_index(partition: &Partition) -> Vec<NodeRef> {
    [Role::Pick, Role::Place]
        .iter()
        .flat_map(|&role| (0..partition.k(role)).map(move |cluster| NodeRef { role, cluster }))
        .collect()
}

/// Observations of `partition` with their class indices, in observation order.
pub fn partition_labels(partition: &Partition) -> Vec<(usize, usize)> {
    let nodes = node_index(partition);
    let index: BTreeMap<NodeRef, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut out: Vec<(usize, usize)> = [Role::Pick, Role::Place]
        .iter()
        .flat_map(|&role| {
            let index = &index;
            partition
                .assignment(role)
                .iter()
                .map(move |(&o, &cluster)| (o, index[&NodeRef { role, cluster }]))
        })
        .collect();
    out.sort_unstable();
    out
}

pub fn partition_hash(partition: &Partition) -> String {
    let json = serde_json::to_vec(partition).expect("partition serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

/// Fits one prototype per node of `partition`; `maps[o]` is the map of observation `o`.
pub fn fit_prototypes(
    maps: &[SpatialMap],
    partition: &Partition,
    gamma: f64,
    feature_side: usize,
) -> Result<PrototypeClassifier, LocalizerError> {
    let labeled = partition_labels(partition);
    let mut examples = Vec::with_capacity(labeled.len());
    let mut labels = Vec::with_capacity(labeled.len());
    for &(o, y) in &labeled {
        let map = maps.get(o).ok_or(LocalizerError::MissingMap(o))?;
        examples.push(features(map, feature_side));
        labels.push(y);
    }
    let nodes = node_index(partition);
    let mut c = PrototypeClassifier::fit(&examples, &labels, nodes.len(), gamma)?;
    c.nodes = nodes;
    c.feature_side = feature_side;
    c.partition_hash = Some(partition_hash(partition));
    Ok(c)
}

/// Stratified fold of every example. Classes with fewer than `folds` examples get
/// `None`: they always train and are never tested.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Vec<Option<usize>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![None; labels.len()];
    // Continue the round-robin across classes so fold sizes stay balanced.
    let mut next = 0;
    for (y, mut members) in by_class {
        if members.len() < folds {
            log::warn!(
                "class {y} has {} examples, fewer than {folds} folds; kept out of testing",
                members.len()
            );
            continue;
        }
        members.shuffle(&mut rng);
        for i in members {
            out[i] = Some(next % folds);
            next += 1;
        }
    }
    out
}

/// Mean held-out accuracy over stratified folds of (`examples`, `labels`).
pub fn cross_validate(
    examples: &[Vec<f64>],
    labels: &[usize],
    folds: usize,
    seed: u64,
    gamma: f64,
) -> Result<f64, LocalizerError> {
    if folds < 2 {
        return Err(LocalizerError::InvalidFolds(folds));
    }
    if examples.len() != labels.len() {
        return Err(LocalizerError::LengthMismatch {
            maps: examples.len(),
            labels: labels.len(),
        });
    }
    let n_classes = labels.iter().max().map_or(0, |&y| y + 1);
    let assigned = stratified_folds(labels, folds, seed);
    let mut accuracies = Vec::new();
    for f in 0..folds {
        let (mut train_x, mut train_y, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for (i, fold) in assigned.iter().enumerate() {
            if *fold == Some(f) {
                test.push(i);
            } else {
                train_x.push(examples[i].clone());
                train_y.push(labels[i]);
            }
        }
        if test.is_empty() {
            continue;
        }
        let c = PrototypeClassifier::fit(&train_x, &train_y, n_classes, gamma)?;
        let mut hits = 0;
        for &i in &test {
            if c.predict(&examples[i])?.0 == labels[i] {
                hits += 1;
            }
        }
        accuracies.push(hits as f64 / test.len() as f64);
    }
    if accuracies.is_empty() {
        return Ok(0.0);
    }
    Ok(accuracies.iter().sum::<f64>() / accuracies.len() as f64)
}

/// Cross-validated accuracy of prototypes fitted to the labels of `partition`.
pub fn cross_validate_maps(
    maps: &[SpatialMap],
    partition: &Partition,
    folds: usize,
    seed: u64,
    gamma: f64,
    feature_side: usize,
) -> Result<f64, LocalizerError> {
    let labeled = partition_labels(partition);
    let mut examples = Vec::with_capacity(labeled.len());
    for &(o, _) in &labeled {
        examples.push(features(
            maps.get(o).ok_or(LocalizerError::MissingMap(o))?,
            feature_side,
        ));
    }
    let labels: Vec<usize> = labeled.iter().map(|&(_, y)| y).collect();
    cross_validate(&examples, &labels, folds, seed, gamma)
}
