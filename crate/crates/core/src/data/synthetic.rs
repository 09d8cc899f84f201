use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Splits};
use crate::error::{Error, Result};
use crate::graph::build_graph;
use crate::matrix::Matrix;

/// Stochastic block model with Gaussian features around per-block means.
#[derive(Debug, Clone, PartialEq)]
pub struct SbmConfig {
    /// Node count per block; block `b` is class `b`.
    pub blocks: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Block `b` has mean `feature_sep · e_(b mod feature_dim)`; noise is
    /// unit-variance.
    pub feature_sep: f64,
    pub seed: u64,
    /// Per-block fraction sent to the training split (at least one node).
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl SbmConfig {
    pub fn new(blocks: Vec<usize>, p_in: f64, p_out: f64, feature_dim: usize, feature_sep: f64, seed: u64) -> Self {
        Self {
            blocks,
            p_in,
            p_out,
            feature_dim,
            feature_sep,
            seed,
            train_fraction: 0.2,
            val_fraction: 0.2,
        }
    }
}

/// Samples a block-model dataset. A pure function of `config`.
///
/// Within each block the nodes are shuffled and split into train, val and
/// test by the configured fractions. Features are rounded through `f32` so
/// that saving and reloading is exact.
pub fn generate_sbm(config: &SbmConfig) -> Result<Dataset> {
    let SbmConfig {
        ref blocks,
        p_in,
        p_out,
        feature_dim,
        feature_sep,
        seed,
        train_fraction,
        val_fraction,
    } = *config;
    for (name, p) in [("p_in", p_in), ("p_out", p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("{name} must lie in [0, 1], got {p}")));
        }
    }
    if !(train_fraction >= 0.0 && val_fraction >= 0.0 && train_fraction + val_fraction <= 1.0) {
        return Err(Error::invalid(
            "split fractions must be non-negative and sum to at most 1",
        ));
    }
    if feature_dim == 0 {
        return Err(Error::invalid("feature_dim must be positive"));
    }
    let block_of: Vec<usize> = blocks
        .iter()
        .enumerate()
        .flat_map(|(b, &size)| std::iter::repeat_n(b, size))
        .collect();
    let n = block_of.len();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if block_of[u] == block_of[v] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let graph = build_graph(&edges, n, true)?;

    let features = Matrix::from_fn(n, feature_dim, |i, j| {
        let mean = if j == block_of[i] % feature_dim {
            feature_sep
        } else {
            0.0
        };
        let noise: f64 = rng.sample(StandardNormal);
        (mean + noise) as f32 as f64
    });

    let mut splits = Splits::default();
    let mut start = 0;
    for &size in blocks {
        let mut ids: Vec<usize> = (start..start + size).collect();
        start += size;
        if size == 0 {
            continue;
        }
        ids.shuffle(&mut rng);
        let train = ((train_fraction * size as f64).round() as usize).clamp(1, size);
        let val = ((val_fraction * size as f64).round() as usize).min(size - train);
        splits.train.extend_from_slice(&ids[..train]);
        splits.val.extend_from_slice(&ids[train..train + val]);
        splits.test.extend_from_slice(&ids[train + val..]);
    }
    for s in [&mut splits.train, &mut splits.val, &mut splits.test] {
        s.sort_unstable();
    }

    let ds = Dataset {
        name: "sbm".into(),
        graph,
        features,
        labels: block_of.into_iter().map(Some).collect(),
        splits,
        num_classes: blocks.len(),
    };
    ds.validate()?;
    Ok(ds)
}

/// Removes exactly `round(fraction · m)` of the `m` undirected non-loop edges,
/// chosen uniformly. The same seed removes the same edges.
pub fn drop_edges(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!(
            "edge drop fraction must lie in [0, 1), got {fraction}"
        )));
    }
    let all = ds.graph.undirected_edges();
    let (loops, edges): (Vec<_>, Vec<_>) = all.into_iter().partition(|(u, v)| u == v);
    let remove = (fraction * edges.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dropped = vec![false; edges.len()];
    for i in sample(&mut rng, edges.len(), remove) {
        dropped[i] = true;
    }
    let kept: Vec<(usize, usize)> = edges
        .into_iter()
        .zip(dropped)
        .filter_map(|(e, d)| (!d).then_some(e))
        .chain(loops)
        .collect();
    Ok(Dataset {
        graph: build_graph(&kept, ds.num_nodes(), true)?,
        ..ds.clone()
    })
}

/// Replaces the training split with `k` nodes per class drawn uniformly from
/// the current training split. Validation and test are untouched.
pub fn sample_labels_per_class(ds: &Dataset, k: usize, seed: u64) -> Result<Dataset> {
    if k == 0 {
        return Err(Error::invalid("need at least one training node per class"));
    }
    let mut pool: BTreeMap<usize, Vec<usize>> = (0..ds.num_classes).map(|c| (c, Vec::new())).collect();
    for &t in &ds.splits.train {
        let c = ds.labels[t].ok_or_else(|| Error::Inconsistent(format!("training node {t} is unlabeled")))?;
        pool.entry(c).or_default().push(t);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(k * pool.len());
    for (c, nodes) in &pool {
        if nodes.len() < k {
            return Err(Error::Inconsistent(format!(
                "class {c} has {} training candidates, {k} requested",
                nodes.len()
            )));
        }
        let mut picked: Vec<usize> = sample(&mut rng, nodes.len(), k).into_iter().map(|i| nodes[i]).collect();
        picked.sort_unstable();
        train.extend(picked);
    }
    Ok(Dataset {
        splits: Splits {
            train,
            ..ds.splits.clone()
        },
        ..ds.clone()
    })
}
