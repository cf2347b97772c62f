use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::kmeans::kmeans_stream;
use super::{QuantizationModel, QuantizerKind, TrainingLog};
use crate::linalg;
use crate::pointcloud::PointCloud;
use crate::random::{self, STREAM_SUBSAMPLE};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductConfig {
    pub m: usize,
    pub k: usize,
    /// Lloyd iterations per subspace.
    pub iters: usize,
    pub seed: u64,
    /// Train on a seeded subsample of at most this many rows.
    pub train_sample: Option<usize>,
}

impl Default for ProductConfig {
    fn default() -> Self {
        ProductConfig { m: 4, k: 256, iters: 25, seed: 0, train_sample: None }
    }
}

/// Splits `0..d` into `m` contiguous ranges whose widths differ by at most
/// one; the wider ranges come first.
pub fn split_dims(d: usize, m: usize) -> Result<Vec<Range<usize>>> {
    if m == 0 || d < m {
        return Err(Error::Config(format!("cannot split d = {d} dimensions into m = {m} subspaces")));
    }
    let (base, extra) = (d / m, d % m);
    let mut start = 0;
    Ok((0..m)
        .map(|j| {
            let w = base + usize::from(j < extra);
            let r = start..start + w;
            start += w;
            r
        })
        .collect())
}

/// Row indices to train on: every row, or a sorted seeded subsample.
pub(crate) fn training_rows(n: usize, limit: Option<usize>, seed: u64) -> Option<Vec<usize>> {
    match limit {
        Some(s) if s < n => {
            let mut rng = random::rng(seed, STREAM_SUBSAMPLE);
            let mut idx = rand::seq::index::sample(&mut rng, n, s).into_vec();
            idx.sort_unstable();
            Some(idx)
        }
        _ => None,
    }
}

/// Independent k-means in each of `m` contiguous subspaces.
pub fn train_product(cloud: &PointCloud, cfg: &ProductConfig) -> Result<(QuantizationModel, TrainingLog)> {
    let ranges = split_dims(cloud.d(), cfg.m)?;
    let subset = training_rows(cloud.n(), cfg.train_sample, cfg.seed).map(|idx| cloud.select_rows(&idx));
    let train = subset.as_ref().unwrap_or(cloud);
    if train.n() < cfg.k {
        return Err(Error::Config(format!("k = {} exceeds the {} training points", cfg.k, train.n())));
    }
    let mut codebooks = Vec::with_capacity(cfg.m);
    let mut log = TrainingLog { train_points: train.n(), ..Default::default() };
    for (j, r) in ranges.iter().enumerate() {
        let pts = linalg::block_f64(train, 0, train.n(), r.clone());
        let km = kmeans_stream(&pts, r.len(), cfg.k, cfg.iters, cfg.seed, j as u64)?;
        codebooks.push(km.centroids.iter().map(|&v| v as f32).collect());
        log.objective_history.push(km.history);
    }
    let model = QuantizationModel {
        kind: QuantizerKind::Product,
        m: cfg.m,
        k: cfg.k,
        d: cloud.d(),
        ranges,
        codebooks,
        icm_sweeps: 0,
    };
    Ok((model, log))
}
