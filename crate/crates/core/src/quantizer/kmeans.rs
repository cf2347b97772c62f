//! k-means++ seeding and Lloyd iterations over row-major `f64` data.

use rand::Rng;
use rayon::prelude::*;

use crate::linalg::{self, CentroidSet};
use crate::random::{self, STREAM_KMEANS, STREAM_SEED_POOL};
use crate::{Error, Result};

/// Output of [`kmeans`].
#[derive(Clone, Debug)]
pub struct KMeans {
    /// `k × w`, row-major.
    pub centroids: Vec<f64>,
    pub codes: Vec<u32>,
    /// Sum of squared distances of points to their centroids.
    pub objective: f64,
    /// Objective after the initial assignment and after every iteration.
    pub history: Vec<f64>,
}

/// Clusters `n` points of width `w` into `k` groups.
///
/// Seeds with k-means++, runs at most `iters` Lloyd iterations (stopping
/// early at a fixed point), re-seeds empty clusters from the points farthest
/// from their centroids, and breaks distance ties toward the lower index.
pub fn kmeans(points: &[f64], w: usize, k: usize, iters: usize, seed: u64) -> Result<KMeans> {
    kmeans_stream(points, w, k, iters, seed, 0)
}

pub(crate) fn check_args(n: usize, w: usize, k: usize) -> Result<()> {
    if w == 0 {
        return Err(Error::Config("k-means needs width ≥ 1".into()));
    }
    if k == 0 {
        return Err(Error::Config("k-means needs k ≥ 1".into()));
    }
    if k > n {
        return Err(Error::Config(format!("k = {k} exceeds the number of points n = {n}")));
    }
    Ok(())
}

pub(crate) fn kmeans_stream(
    points: &[f64],
    w: usize,
    k: usize,
    iters: usize,
    seed: u64,
    stream: u64,
) -> Result<KMeans> {
    let n = points.len() / w.max(1);
    check_args(n, w, k)?;
    if iters == 0 {
        return Err(Error::Config("k-means needs iters ≥ 1".into()));
    }
    let mut cents = CentroidSet::new(seed_plus_plus(points, w, k, seed, stream), k, w);
    let (mut codes, mut dists) = assign(points, w, &cents);
    let mut history = vec![block_sum(&dists)];
    for _ in 0..iters {
        let reseeded = update_means(points, w, &codes, &mut cents);
        let (new_codes, new_dists) = assign(points, w, &cents);
        let unchanged = new_codes == codes;
        codes = new_codes;
        dists = new_dists;
        history.push(block_sum(&dists));
        if unchanged && !reseeded {
            break;
        }
    }
    Ok(KMeans { objective: *history.last().unwrap(), centroids: cents.data, codes, history })
}

/// Fixed-order sum over `BLOCK_ROWS` blocks.
pub(crate) fn block_sum(v: &[f64]) -> f64 {
    v.chunks(linalg::BLOCK_ROWS).map(|c| c.iter().sum::<f64>()).sum()
}

/// Rows per centroid in the k-means++ candidate pool.
pub(crate) const SEED_POOL_PER_CLUSTER: usize = 64;
/// Smallest k-means++ candidate pool.
pub(crate) const SEED_POOL_MIN: usize = 32_768;

/// k-means++ D² seeding. Returns `k × w` centroids.
///
/// With more than `max(SEED_POOL_MIN, SEED_POOL_PER_CLUSTER · k)` points,
/// seeds are drawn by D² sampling over a seeded, order-preserving subsample
/// of that size.
pub(crate) fn seed_plus_plus(points: &[f64], w: usize, k: usize, seed: u64, stream: u64) -> Vec<f64> {
    let n = points.len() / w;
    let pool = SEED_POOL_PER_CLUSTER.saturating_mul(k).max(SEED_POOL_MIN);
    if n <= pool {
        return seed_d2(points, w, k, seed, stream);
    }
    let mut rng = random::rng(seed, STREAM_SEED_POOL + stream);
    let mut idx = rand::seq::index::sample(&mut rng, n, pool).into_vec();
    idx.sort_unstable();
    let mut sub = Vec::with_capacity(pool * w);
    for i in idx {
        sub.extend_from_slice(&points[i * w..(i + 1) * w]);
    }
    seed_d2(&sub, w, k, seed, stream)
}

/// D² seeding over every point.
///
/// A point is skipped when the triangle inequality (with a relative margin
/// that dominates rounding) proves the new seed cannot be closer than its
/// current nearest seed, so the result equals the unpruned computation.
fn seed_d2(points: &[f64], w: usize, k: usize, seed: u64, stream: u64) -> Vec<f64> {
    let n = points.len() / w;
    let mut rng = random::rng(seed, STREAM_KMEANS + stream);
    let mut centroids = Vec::with_capacity(k * w);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&points[first * w..(first + 1) * w]);
    let mut mind: Vec<f64> = vec![f64::INFINITY; n];
    let mut near: Vec<u32> = vec![0; n];
    let mut last = first;
    for s in 1..k {
        let c = points[last * w..(last + 1) * w].to_vec();
        let sep: Vec<f64> = (0..s).map(|a| linalg::sq_dist(&centroids[a * w..(a + 1) * w], &c).sqrt()).collect();
        let idx = (s - 1) as u32;
        mind.par_chunks_mut(linalg::BLOCK_ROWS)
            .zip(near.par_chunks_mut(linalg::BLOCK_ROWS))
            .enumerate()
            .for_each(|(b, (chunk, nn))| {
                let start = b * linalg::BLOCK_ROWS;
                for (o, (m, a)) in chunk.iter_mut().zip(nn.iter_mut()).enumerate() {
                    if m.is_finite() && sep[*a as usize] > 2.0 * m.sqrt() * (1.0 + 1e-9) {
                        continue;
                    }
                    let i = start + o;
                    let d = linalg::sq_dist(&points[i * w..(i + 1) * w], &c);
                    if d < *m {
                        *m = d;
                        *a = idx;
                    }
                }
            });
        let total = block_sum(&mind);
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in mind.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave `acc` just short of `target`
            chosen.unwrap_or_else(|| mind.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            rng.random_range(0..n)
        };
        centroids.extend_from_slice(&points[pick * w..(pick + 1) * w]);
        last = pick;
    }
    centroids
}

/// Exact nearest-centroid assignment with per-point squared distances.
pub(crate) fn assign(points: &[f64], w: usize, cents: &CentroidSet) -> (Vec<u32>, Vec<f64>) {
    let n = points.len() / w;
    let mut codes = vec![0u32; n];
    let mut dists = vec![0.0; n];
    codes
        .par_chunks_mut(linalg::BLOCK_ROWS)
        .zip(dists.par_chunks_mut(linalg::BLOCK_ROWS))
        .enumerate()
        .for_each(|(b, (cc, dd))| {
            let s = b * linalg::BLOCK_ROWS;
            let r = cc.len();
            linalg::nearest_block(&points[s * w..(s + r) * w], r, cents, cc, dd);
        });
    (codes, dists)
}

/// Moves each centroid to the mean of its points, then re-seeds empty
/// clusters from the points farthest from their (updated) centroids.
/// Returns whether any cluster was re-seeded.
pub(crate) fn update_means(points: &[f64], w: usize, codes: &[u32], cents: &mut CentroidSet) -> bool {
    let k = cents.k;
    let mut sums = vec![0.0; k * w];
    let mut counts = vec![0usize; k];
    for (x, &c) in points.chunks_exact(w).zip(codes) {
        let c = c as usize;
        counts[c] += 1;
        for (s, v) in sums[c * w..(c + 1) * w].iter_mut().zip(x) {
            *s += v;
        }
    }
    let mut data = cents.data.clone();
    for c in 0..k {
        if counts[c] > 0 {
            let inv = counts[c] as f64;
            for (dst, s) in data[c * w..(c + 1) * w].iter_mut().zip(&sums[c * w..(c + 1) * w]) {
                *dst = s / inv;
            }
        }
    }
    let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if !empty.is_empty() {
        let dist: Vec<f64> = points
            .par_chunks(w)
            .zip(codes.par_iter())
            .map(|(x, &c)| linalg::sq_dist(x, &data[c as usize * w..(c as usize + 1) * w]))
            .collect();
        for (c, i) in empty.into_iter().zip(farthest(&dist)) {
            data[c * w..(c + 1) * w].copy_from_slice(&points[i * w..(i + 1) * w]);
        }
        *cents = CentroidSet::new(data, k, w);
        return true;
    }
    *cents = CentroidSet::new(data, k, w);
    false
}

/// Point indices ordered by decreasing distance, lowest index first on ties.
pub(crate) fn farthest(dist: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dist.len()).collect();
    idx.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Best 2-partition of a small 1-d set by exhaustive enumeration.
    fn best_two_partition(xs: &[f64]) -> (f64, [f64; 2]) {
        let n = xs.len();
        let mut best = (f64::INFINITY, [0.0; 2]);
        for mask in 1u32..(1 << n) - 1 {
            let (mut a, mut b) = (vec![], vec![]);
            for (i, &x) in xs.iter().enumerate() {
                if mask >> i & 1 == 1 { a.push(x) } else { b.push(x) }
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let sse = |v: &[f64]| { let m = mean(v); v.iter().map(|x| (x - m).powi(2)).sum::<f64>() };
            let obj = sse(&a) + sse(&b);
            if obj < best.0 {
                let (ma, mb) = (mean(&a), mean(&b));
                best = (obj, [ma.min(mb), ma.max(mb)]);
            }
        }
        best
    }

    #[test]
    fn four_points_match_exhaustive_oracle() {
        let xs = [0.0, 1.0, 10.0, 11.0];
        let (obj, cents) = best_two_partition(&xs);
        assert_eq!(obj, 1.0);
        for seed in 0..10 {
            let km = kmeans(&xs, 1, 2, 20, seed).unwrap();
            let mut c = km.centroids.clone();
            c.sort_by(f64::total_cmp);
            assert_eq!(c, cents.to_vec(), "seed {seed}");
            assert!((km.objective - obj).abs() < 1e-12);
        }
    }

    #[test]
    fn k_equals_n_is_perfect() {
        let xs: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let km = kmeans(&xs, 2, 6, 5, 1).unwrap();
        assert_eq!(km.objective, 0.0);
        let mut codes = km.codes.clone();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), 6);
    }

    #[test]
    fn k_one_is_the_mean() {
        let xs = [1.0, 2.0, 3.0, 10.0, -4.0, 6.0];
        let km = kmeans(&xs, 2, 1, 3, 9).unwrap();
        assert!((km.centroids[0] - (1.0 + 3.0 - 4.0) / 3.0).abs() < 1e-12);
        assert!((km.centroids[1] - (2.0 + 10.0 + 6.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn objective_never_increases_and_is_seed_deterministic() {
        let mut rng = random::rng(5, 0);
        let pts: Vec<f64> = (0..3000).map(|_| rng.random::<f64>() * 10.0).collect();
        let a = kmeans(&pts, 3, 17, 30, 4).unwrap();
        for w in a.history.windows(2) {
            assert!(w[1] <= w[0], "{:?}", a.history);
        }
        let b = kmeans(&pts, 3, 17, 30, 4).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.codes, b.codes);
    }

    #[test]
    fn too_many_clusters_is_an_error() {
        assert!(matches!(kmeans(&[1.0, 2.0], 1, 3, 1, 0), Err(Error::Config(_))));
        assert!(kmeans(&[1.0, 2.0], 1, 1, 0, 0).is_err());
    }

    #[test]
    fn duplicate_points_still_seed() {
        let xs = [1.0; 8];
        let km = kmeans(&xs, 1, 3, 4, 2).unwrap();
        assert_eq!(km.objective, 0.0);
    }

    /// Plain D² seeding without pruning, drawing from the same stream.
    fn naive_seeds(points: &[f64], w: usize, k: usize, seed: u64) -> Vec<f64> {
        let n = points.len() / w;
        let mut rng = random::rng(seed, STREAM_KMEANS);
        let first = rng.random_range(0..n);
        let mut out = points[first * w..(first + 1) * w].to_vec();
        let mut mind = vec![f64::INFINITY; n];
        let mut last = first;
        for _ in 1..k {
            for i in 0..n {
                mind[i] = mind[i].min(linalg::sq_dist(&points[i * w..(i + 1) * w], &points[last * w..(last + 1) * w]));
            }
            let total = block_sum(&mind);
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = mind.iter().rposition(|&d| d > 0.0).unwrap();
            for (i, &d) in mind.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = i;
                    break;
                }
            }
            out.extend_from_slice(&points[pick * w..(pick + 1) * w]);
            last = pick;
        }
        out
    }

    #[test]
    fn pruned_seeding_equals_plain_seeding() {
        let mut rng = random::rng(8, 1);
        for (w, clustered) in [(1, false), (5, true), (16, true), (16, false)] {
            let pts: Vec<f64> = (0..2500 * w)
                .map(|t| {
                    let base = if clustered { ((t / w) % 7) as f64 * 20.0 } else { 0.0 };
                    base + rng.random::<f64>()
                })
                .collect();
            for seed in 0..3 {
                assert_eq!(seed_d2(&pts, w, 40, seed, 0), naive_seeds(&pts, w, 40, seed), "w {w}");
            }
        }
    }
}
