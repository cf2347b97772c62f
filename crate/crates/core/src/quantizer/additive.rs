//! Additive quantization: `m` full-width codebooks whose selected centroids
//! sum to the reconstruction. Training alternates ICM encoding with a joint
//! least-squares refit of every codebook.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::{assign, block_sum, check_args, farthest, seed_plus_plus, update_means};
use super::product::training_rows;
use super::{QuantizationModel, QuantizerKind, TrainingLog};
use crate::linalg::{self, CentroidSet, BLOCK_ROWS};
use crate::pointcloud::PointCloud;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdditiveConfig {
    pub m: usize,
    pub k: usize,
    /// Alternations of codebook update and ICM encoding.
    pub outer_iters: usize,
    /// ICM sweeps per encoding pass (training and later encoding).
    pub icm_sweeps: usize,
    pub seed: u64,
    /// Train on a seeded subsample of at most this many rows.
    pub train_sample: Option<usize>,
}

impl Default for AdditiveConfig {
    fn default() -> Self {
        AdditiveConfig { m: 4, k: 256, outer_iters: 10, icm_sweeps: 3, seed: 0, train_sample: None }
    }
}

/// Encodes rows against fixed codebooks using precomputed inner products:
/// `⟨x, c⟩` per block via one gemm, and the `mk × mk` table of
/// centroid-centroid products. Candidate codes are screened on those tables
/// and confirmed with directly computed residual distances.
pub(crate) struct Encoder {
    m: usize,
    k: usize,
    d: usize,
    sets: Vec<CentroidSet>,
    all: Vec<f64>,
    norms: Vec<f64>,
    cross: Vec<f64>,
    max_norm: f64,
}

struct Scratch {
    resid: Vec<f64>,
    scores: Vec<f64>,
}

impl Encoder {
    pub(crate) fn new(sets: &[CentroidSet], d: usize) -> Self {
        let m = sets.len();
        let k = sets[0].k;
        let mut all = Vec::with_capacity(m * k * d);
        let mut norms = Vec::with_capacity(m * k);
        for s in sets {
            all.extend_from_slice(&s.data);
            norms.extend_from_slice(&s.norms);
        }
        let mut cross = vec![0.0; m * k * m * k];
        linalg::gemm_nt(&all, m * k, &all, m * k, d, &mut cross);
        let max_norm = norms.iter().copied().fold(0.0, f64::max);
        Encoder { m, k, d, sets: sets.to_vec(), all, norms, cross, max_norm }
    }

    fn scratch(&self) -> Scratch {
        Scratch { resid: vec![0.0; self.d], scores: vec![0.0; self.k] }
    }

    /// Best centroid of codebook `j` for the residual left by codebooks
    /// `0..upto` (excluding `j`) under their current codes. Returns the code
    /// and its squared residual distance; `s.resid` holds the residual.
    fn best(&self, x: &[f64], dots: &[f64], codes: &[u32], j: usize, upto: usize, s: &mut Scratch) -> (usize, f64) {
        let (k, mk) = (self.k, self.m * self.k);
        s.resid.copy_from_slice(x);
        for l in (0..upto).filter(|&l| l != j) {
            for (r, v) in s.resid.iter_mut().zip(self.sets[l].centroid(codes[l] as usize)) {
                *r -= v;
            }
        }
        let mut best = f64::INFINITY;
        for c in 0..k {
            let g = j * k + c;
            let row = &self.cross[g * mk..(g + 1) * mk];
            let mut inner = dots[g];
            for l in (0..upto).filter(|&l| l != j) {
                inner -= row[l * k + codes[l] as usize];
            }
            let sc = self.norms[g] - 2.0 * inner;
            s.scores[c] = sc;
            if sc < best {
                best = sc;
            }
        }
        let scale = linalg::dot(x, x) + linalg::dot(&s.resid, &s.resid) + self.m as f64 * self.max_norm;
        let margin = 1e-9 * scale + f64::MIN_POSITIVE;
        let mut arg = 0;
        let mut arg_d = f64::INFINITY;
        for c in 0..k {
            if s.scores[c] <= best + margin {
                let dd = linalg::sq_dist(&s.resid, self.sets[j].centroid(c));
                if dd < arg_d {
                    arg_d = dd;
                    arg = c;
                }
            }
        }
        (arg, arg_d)
    }

    /// Encodes a row-major `r × d` block into `codes` (`r × m`): optionally a
    /// greedy residual pass first, then `sweeps` ICM sweeps. A code changes
    /// only when the new residual distance is strictly smaller (or equal with
    /// a lower index), so no point's error ever grows. Returns the number of
    /// code changes made by the sweeps.
    pub(crate) fn run(&self, block: &[f64], r: usize, codes: &mut [u32], greedy: bool, sweeps: usize) -> usize {
        let (m, d, mk) = (self.m, self.d, self.m * self.k);
        let mut dots = vec![0.0; r * mk];
        linalg::gemm_nt(block, r, &self.all, mk, d, &mut dots);
        let mut s = self.scratch();
        let mut moves = 0;
        for i in 0..r {
            let x = &block[i * d..(i + 1) * d];
            let dt = &dots[i * mk..(i + 1) * mk];
            let cc = &mut codes[i * m..(i + 1) * m];
            if greedy {
                for j in 0..m {
                    cc[j] = self.best(x, dt, cc, j, j, &mut s).0 as u32;
                }
            }
            for _ in 0..sweeps {
                let mut changed = false;
                for j in 0..m {
                    let (c, dbest) = self.best(x, dt, cc, j, m, &mut s);
                    let cur = cc[j] as usize;
                    let dcur = linalg::sq_dist(&s.resid, self.sets[j].centroid(cur));
                    if dbest < dcur || (dbest == dcur && c < cur) {
                        cc[j] = c as u32;
                        moves += 1;
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
        }
        moves
    }
}

fn icm_all(enc: &Encoder, x: &[f64], d: usize, m: usize, codes: &mut [u32], sweeps: usize) {
    codes.par_chunks_mut(BLOCK_ROWS * m).enumerate().for_each(|(b, cc)| {
        let s = b * BLOCK_ROWS;
        let r = cc.len() / m;
        enc.run(&x[s * d..(s + r) * d], r, cc, false, sweeps);
    });
}

/// Squared error of every row against the sum of its selected centroids.
fn errors(x: &[f64], d: usize, sets: &[CentroidSet], codes: &[u32]) -> Vec<f64> {
    let m = sets.len();
    let n = x.len() / d;
    let mut out = vec![0.0; n];
    out.par_chunks_mut(BLOCK_ROWS).enumerate().for_each(|(b, oo)| {
        let mut buf = vec![0.0; d];
        for (o, e) in oo.iter_mut().enumerate() {
            let i = b * BLOCK_ROWS + o;
            buf.fill(0.0);
            for (j, s) in sets.iter().enumerate() {
                for (bv, v) in buf.iter_mut().zip(s.centroid(codes[i * m + j] as usize)) {
                    *bv += v;
                }
            }
            *e = linalg::sq_dist(&x[i * d..(i + 1) * d], &buf);
        }
    });
    out
}

/// Joint least-squares refit of all used centroids given fixed codes, via
/// the normal equations with a vanishing ridge (the system always has an
/// `m − 1`-dimensional null space from shifting a constant between
/// codebooks). Unused centroids keep their values. `None` if the
/// factorization fails.
fn least_squares_update(x: &[f64], d: usize, sets: &[CentroidSet], codes: &[u32]) -> Option<Vec<CentroidSet>> {
    let (m, k) = (sets.len(), sets[0].k);
    let mut index = vec![usize::MAX; m * k];
    let mut used = Vec::new();
    for row in codes.chunks_exact(m) {
        for (j, &c) in row.iter().enumerate() {
            let g = j * k + c as usize;
            if index[g] == usize::MAX {
                index[g] = 0;
            }
        }
    }
    for (g, slot) in index.iter_mut().enumerate() {
        if *slot == 0 {
            *slot = used.len();
            used.push(g);
        }
    }
    let u = used.len();
    let mut a = DMatrix::<f64>::zeros(u, u);
    let mut rhs = vec![0.0; u * d];
    for (row, xi) in codes.chunks_exact(m).zip(x.chunks_exact(d)) {
        for (j, &c) in row.iter().enumerate() {
            let p = index[j * k + c as usize];
            for (l, &c2) in row.iter().enumerate() {
                a[(p, index[l * k + c2 as usize])] += 1.0;
            }
            for (t, v) in rhs[p * d..(p + 1) * d].iter_mut().zip(xi) {
                *t += v;
            }
        }
    }
    let ridge = 1e-10 * (0..u).map(|p| a[(p, p)]).fold(0.0, f64::max);
    for p in 0..u {
        a[(p, p)] += ridge;
    }
    let chol = a.cholesky()?;
    let sol = chol.solve(&DMatrix::from_row_slice(u, d, &rhs));
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut out: Vec<Vec<f64>> = sets.iter().map(|s| s.data.clone()).collect();
    for (p, &g) in used.iter().enumerate() {
        let (j, c) = (g / k, g % k);
        for t in 0..d {
            out[j][c * d + t] = sol[(p, t)];
        }
    }
    Some(out.into_iter().map(|data| CentroidSet::new(data, k, d)).collect())
}

/// Residual target of codebook `j` for row `i`: `x − Σ_{l≠j} c_l`.
fn residual(x: &[f64], d: usize, sets: &[CentroidSet], codes: &[u32], i: usize, j: usize, out: &mut [f64]) {
    let m = sets.len();
    out.copy_from_slice(&x[i * d..(i + 1) * d]);
    for (l, s) in sets.iter().enumerate().filter(|&(l, _)| l != j) {
        for (o, v) in out.iter_mut().zip(s.centroid(codes[i * m + l] as usize)) {
            *o -= v;
        }
    }
}

/// Block-coordinate update: each codebook in turn becomes the per-cell mean
/// of its residual targets. Never increases the total error.
fn residual_means_update(x: &[f64], d: usize, sets: &mut [CentroidSet], codes: &[u32]) {
    let (m, k) = (sets.len(), sets[0].k);
    let n = x.len() / d;
    let mut r = vec![0.0; d];
    for j in 0..m {
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            residual(x, d, sets, codes, i, j, &mut r);
            let c = codes[i * m + j] as usize;
            counts[c] += 1;
            for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(&r) {
                *s += v;
            }
        }
        let mut data = sets[j].data.clone();
        for c in (0..k).filter(|&c| counts[c] > 0) {
            for t in 0..d {
                data[c * d + t] = sums[c * d + t] / counts[c] as f64;
            }
        }
        sets[j] = CentroidSet::new(data, k, d);
    }
}

/// Points unused centroids at the residual targets of the worst-
/// reconstructed rows. Unused centroids carry no error, so this never
/// changes the objective.
fn reseed_empty(x: &[f64], d: usize, sets: &mut [CentroidSet], codes: &[u32]) -> bool {
    let (m, k) = (sets.len(), sets[0].k);
    let mut counts = vec![0usize; m * k];
    for row in codes.chunks_exact(m) {
        for (j, &c) in row.iter().enumerate() {
            counts[j * k + c as usize] += 1;
        }
    }
    if counts.iter().all(|&c| c > 0) {
        return false;
    }
    let order = farthest(&errors(x, d, sets, codes));
    let mut next = order.into_iter();
    let mut r = vec![0.0; d];
    for j in 0..m {
        let empty: Vec<usize> = (0..k).filter(|&c| counts[j * k + c] == 0).collect();
        if empty.is_empty() {
            continue;
        }
        let mut data = sets[j].data.clone();
        for c in empty {
            let Some(i) = next.next() else { break };
            residual(x, d, sets, codes, i, j, &mut r);
            data[c * d..(c + 1) * d].copy_from_slice(&r);
        }
        sets[j] = CentroidSet::new(data, k, d);
    }
    true
}

/// Trains an additive quantizer.
///
/// Codebooks are initialized greedily: k-means++ seeding on the running
/// residual, one codebook after another. Each outer iteration then refits
/// the codebooks by least squares (falling back to per-codebook residual
/// means if that would not lower the error) and re-encodes with ICM. The
/// total squared error is recorded after every outer iteration and never
/// increases. With `m = 1` the procedure is exactly [`super::kmeans`].
pub fn train_additive(cloud: &PointCloud, cfg: &AdditiveConfig) -> Result<(QuantizationModel, TrainingLog)> {
    if cfg.m == 0 {
        return Err(Error::Config("additive quantizer needs m ≥ 1".into()));
    }
    if cfg.icm_sweeps == 0 {
        return Err(Error::Config("additive quantizer needs at least one ICM sweep".into()));
    }
    let subset = training_rows(cloud.n(), cfg.train_sample, cfg.seed).map(|idx| cloud.select_rows(&idx));
    let train = subset.as_ref().unwrap_or(cloud);
    let (n, d, m, k) = (train.n(), train.d(), cfg.m, cfg.k);
    check_args(n, d, k)?;
    let x = linalg::block_f64(train, 0, n, 0..d);

    // greedy residual initialization
    let mut sets: Vec<CentroidSet> = Vec::with_capacity(m);
    let mut codes = vec![0u32; n * m];
    let mut resid = x.clone();
    for j in 0..m {
        let set = CentroidSet::new(seed_plus_plus(&resid, d, k, cfg.seed, j as u64), k, d);
        let (cj, _) = assign(&resid, d, &set);
        for (i, &c) in cj.iter().enumerate() {
            codes[i * m + j] = c;
            for (r, v) in resid[i * d..(i + 1) * d].iter_mut().zip(set.centroid(c as usize)) {
                *r -= v;
            }
        }
        sets.push(set);
    }
    drop(resid);

    let mut log = TrainingLog { train_points: n, ..Default::default() };
    let mut history = vec![block_sum(&errors(&x, d, &sets, &codes))];
    for _ in 0..cfg.outer_iters {
        let before = *history.last().unwrap();
        let reseeded = if m == 1 {
            update_means(&x, d, &codes, &mut sets[0])
        } else {
            match least_squares_update(&x, d, &sets, &codes) {
                Some(new) if block_sum(&errors(&x, d, &new, &codes)) <= before => sets = new,
                _ => {
                    log.fallback_updates += 1;
                    residual_means_update(&x, d, &mut sets, &codes);
                }
            }
            reseed_empty(&x, d, &mut sets, &codes)
        };
        let prev = codes.clone();
        let enc = Encoder::new(&sets, d);
        icm_all(&enc, &x, d, m, &mut codes, cfg.icm_sweeps);
        history.push(block_sum(&errors(&x, d, &sets, &codes)));
        if codes == prev && !reseeded {
            break;
        }
    }
    log.objective_history.push(history);

    let model = QuantizationModel {
        kind: QuantizerKind::Additive,
        m,
        k,
        d,
        ranges: vec![0..d; m],
        codebooks: sets.iter().map(|s| s.data.iter().map(|&v| v as f32).collect()).collect(),
        icm_sweeps: cfg.icm_sweeps,
    };
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::generate_uniform;
    use crate::quantizer::kmeans;

    #[test]
    fn single_codebook_is_kmeans() {
        let cloud = generate_uniform(600, 3, -2.0, 2.0, 12).unwrap();
        let pts = linalg::block_f64(&cloud, 0, cloud.n(), 0..3);
        for iters in [1, 4, 15] {
            let km = kmeans(&pts, 3, 9, iters, 77).unwrap();
            let cfg = AdditiveConfig { m: 1, k: 9, outer_iters: iters, icm_sweeps: 2, seed: 77, train_sample: None };
            let (_, log) = train_additive(&cloud, &cfg).unwrap();
            assert_eq!(log.objective_history[0], km.history, "iters {iters}");
        }
    }

    #[test]
    fn constant_cloud_is_reconstructed_exactly() {
        let u = [1.5f32, -2.0, 0.25];
        let data: Vec<f32> = (0..20).flat_map(|_| u).collect();
        let cloud = PointCloud::new(data, 20, 3, "u").unwrap();
        let cfg = AdditiveConfig { m: 2, k: 1, outer_iters: 3, icm_sweeps: 1, seed: 0, train_sample: None };
        let (model, log) = train_additive(&cloud, &cfg).unwrap();
        assert!(*log.objective_history[0].last().unwrap() < 1e-20);
        for t in 0..3 {
            let s = model.codebooks[0][t] as f64 + model.codebooks[1][t] as f64;
            assert!((s - u[t] as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn descent_across_outer_iterations() {
        let cloud = generate_uniform(400, 6, -1.0, 1.0, 3).unwrap();
        let cfg = AdditiveConfig { m: 3, k: 8, outer_iters: 8, icm_sweeps: 2, seed: 5, train_sample: None };
        let (_, log) = train_additive(&cloud, &cfg).unwrap();
        let h = &log.objective_history[0];
        assert!(h.windows(2).all(|w| w[1] <= w[0]), "{h:?}");
        assert!(h.last().unwrap() < &h[0]);
    }

    #[test]
    fn icm_never_increases_point_error() {
        let cloud = generate_uniform(300, 5, -1.0, 1.0, 9).unwrap();
        let cfg = AdditiveConfig { m: 3, k: 6, outer_iters: 2, icm_sweeps: 1, seed: 1, train_sample: None };
        let (model, _) = train_additive(&cloud, &cfg).unwrap();
        let sets = model.centroid_sets();
        let enc = Encoder::new(&sets, 5);
        let x = linalg::block_f64(&cloud, 0, 300, 0..5);
        let mut codes = vec![0u32; 300 * 3];
        enc.run(&x, 300, &mut codes, true, 0);
        let mut before = errors(&x, 5, &sets, &codes);
        for _ in 0..4 {
            enc.run(&x, 300, &mut codes, false, 1);
            let after = errors(&x, 5, &sets, &codes);
            for (a, b) in after.iter().zip(&before) {
                assert!(*a <= b * (1.0 + 1e-12) + 1e-15, "{a} > {b}");
            }
            before = after;
        }
    }

    #[test]
    fn bad_configs() {
        let cloud = generate_uniform(10, 2, 0.0, 1.0, 0).unwrap();
        let base = AdditiveConfig { m: 2, k: 4, outer_iters: 1, icm_sweeps: 1, seed: 0, train_sample: None };
        assert!(train_additive(&cloud, &AdditiveConfig { m: 0, ..base.clone() }).is_err());
        assert!(train_additive(&cloud, &AdditiveConfig { k: 11, ..base.clone() }).is_err());
        assert!(train_additive(&cloud, &AdditiveConfig { icm_sweeps: 0, ..base }).is_err());
    }
}
