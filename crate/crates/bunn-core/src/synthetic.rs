//! Synthetic tasks: cluster-averaging on barbell/clique graphs and the
//! bottleneck neighbors-match task on binary trees.

use std::rc::Rc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{barbell_graph, binary_tree, clique_graph};
use crate::rng;
use crate::train::{Dataset, Sample, Target};

/// Cluster mean magnitude √3/2; type 0 sits at +√3/2, type 1 at −√3/2.
pub fn cluster_mean() -> f64 {
    3.0f64.sqrt() / 2.0
}

/// Feature half-width √15: inputs are uniform in [m − w, m + w]. Calibrated
/// so that at N = 10 (five nodes per cluster) the opposite-cluster-mean
/// reference predictor scores MSE = w²/(3·5) = 1.0 per node; the constant-zero
/// reference then scores 3/4 + 1 = 1.75. Node types are carried by the
/// one-hot positional encodings, not by the (overlapping) feature supports.
pub fn default_half_width() -> f64 {
    15.0f64.sqrt()
}

/// Default feature dimensionality: scalar node features; see
/// [`default_half_width`] for the calibration of the reference MSE levels.
pub fn default_dims() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AveragingKind {
    Barbell,
    Clique,
}

/// Cluster-averaging task: a `dims`-dimensional input per node drawn
/// uniformly around the type's cluster mean in every dimension; the target at
/// each node is the dimension-wise mean input over nodes of the *other* type.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AveragingTask {
    pub kind: AveragingKind,
    pub n: usize,
    pub dims: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub seed: u64,
    pub half_width: f64,
}

/// The dataset plus the per-node type labels.
pub struct AveragingData {
    pub dataset: Dataset,
    pub types: Vec<u8>,
}

fn averaging_sample(
    types: &[u8],
    means: &[f64; 2],
    dims: usize,
    half_width: f64,
    rng: &mut impl Rng,
) -> Sample {
    let n = types.len();
    let mut x = Array2::zeros((n, dims));
    for v in 0..n {
        let m = means[types[v] as usize];
        for j in 0..dims {
            x[[v, j]] = rng.gen_range(m - half_width..=m + half_width);
        }
    }
    let mut sums = Array2::<f64>::zeros((2, dims));
    let mut counts = [0usize; 2];
    for v in 0..n {
        let ty = types[v] as usize;
        for j in 0..dims {
            sums[[ty, j]] += x[[v, j]];
        }
        counts[ty] += 1;
    }
    let mut y = Array2::zeros((n, dims));
    for v in 0..n {
        let other = 1 - types[v] as usize;
        for j in 0..dims {
            y[[v, j]] = sums[[other, j]] / counts[other] as f64;
        }
    }
    Sample {
        x,
        target: Target::Signal(y),
    }
}

/// Generates the averaging dataset. Pure function of the task description:
/// identical tasks yield bit-identical datasets.
pub fn averaging_dataset(task: &AveragingTask) -> Result<AveragingData> {
    if task.half_width < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "negative feature half-width {}",
            task.half_width
        )));
    }
    if task.dims == 0 {
        return Err(Error::InvalidParameter(
            "feature dimensionality must be ≥ 1".into(),
        ));
    }
    let (graph, types) = match task.kind {
        AveragingKind::Barbell => barbell_graph(task.n)?,
        AveragingKind::Clique => clique_graph(task.n)?,
    };
    let n = graph.node_count();
    let mut pe = Array2::zeros((n, n));
    for v in 0..n {
        pe[[v, v]] = 1.0;
    }
    let means = [cluster_mean(), -cluster_mean()];
    let mut r = rng::stream(task.seed, "averaging-dataset");
    let train = (0..task.train_samples)
        .map(|_| averaging_sample(&types, &means, task.dims, task.half_width, &mut r))
        .collect();
    let test = (0..task.test_samples)
        .map(|_| averaging_sample(&types, &means, task.dims, task.half_width, &mut r))
        .collect();
    Ok(AveragingData {
        dataset: Dataset {
            graph: Rc::new(graph),
            pe,
            train,
            test,
        },
        types,
    })
}

/// Per-node MSE (summed over feature dimensions, averaged over nodes and
/// samples) of the fixed reference predictor that outputs the *expected* mean
/// of the opposite cluster (∓√3/2 in every dimension) at every node.
pub fn opposite_mean_reference_mse(data: &AveragingData, samples: &[Sample]) -> f64 {
    let means = [cluster_mean(), -cluster_mean()];
    let mut total = 0.0;
    let mut count = 0usize;
    for s in samples {
        if let Target::Signal(y) = &s.target {
            for (v, &ty) in data.types.iter().enumerate() {
                let pred = means[1 - ty as usize];
                for j in 0..y.ncols() {
                    total += (y[[v, j]] - pred).powi(2);
                }
                count += 1;
            }
        }
    }
    total / count as f64
}

/// Per-node MSE (summed over feature dimensions, averaged over nodes and
/// samples) of the constant-zero predictor.
pub fn constant_zero_reference_mse(samples: &[Sample]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in samples {
        if let Target::Signal(y) = &s.target {
            total += y.iter().map(|t| t * t).sum::<f64>();
            count += y.nrows();
        }
    }
    total / count as f64
}

/// Neighbors-match task on a complete binary tree of the given depth. Each
/// leaf carries a fixed class (its index, one-hot) and a per-sample count
/// from a random permutation of 1..=L; the root carries a query count and
/// must be classified as the class of the leaf holding that count.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NeighborsMatchTask {
    pub depth: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub seed: u64,
}

pub struct NeighborsMatchData {
    pub dataset: Dataset,
    pub root: usize,
    pub leaves: Vec<usize>,
    /// Number of classes = number of leaves.
    pub classes: usize,
}

fn neighborsmatch_sample(
    n: usize,
    root: usize,
    leaves: &[usize],
    rng: &mut impl Rng,
) -> Sample {
    let l = leaves.len();
    // counts 1..=L in random order over the leaves; query drawn uniformly
    let mut counts: Vec<usize> = (1..=l).collect();
    counts.shuffle(rng);
    let query = rng.gen_range(1..=l);
    let label = counts.iter().position(|&c| c == query).unwrap();
    let mut x = Array2::zeros((n, l + 1));
    for (i, &leaf) in leaves.iter().enumerate() {
        x[[leaf, i]] = 1.0; // fixed class one-hot
        x[[leaf, l]] = counts[i] as f64 / l as f64;
    }
    x[[root, l]] = query as f64 / l as f64;
    Sample {
        x,
        target: Target::Class { node: root, label },
    }
}

/// Generates the neighbors-match dataset; pure function of the task.
pub fn neighborsmatch_dataset(task: &NeighborsMatchTask) -> Result<NeighborsMatchData> {
    let tree = binary_tree(task.depth)?;
    let n = tree.graph.node_count();
    let mut pe = Array2::zeros((n, n));
    for v in 0..n {
        pe[[v, v]] = 1.0;
    }
    let mut r = rng::stream(task.seed, "neighborsmatch-dataset");
    let train = (0..task.train_samples)
        .map(|_| neighborsmatch_sample(n, tree.root, &tree.leaves, &mut r))
        .collect();
    let test = (0..task.test_samples)
        .map(|_| neighborsmatch_sample(n, tree.root, &tree.leaves, &mut r))
        .collect();
    let classes = tree.leaves.len();
    Ok(NeighborsMatchData {
        dataset: Dataset {
            graph: Rc::new(tree.graph),
            pe,
            train,
            test,
        },
        root: tree.root,
        leaves: tree.leaves,
        classes,
    })
}

#[cfg(test)]
mod tests;
