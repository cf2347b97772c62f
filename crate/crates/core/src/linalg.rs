//! Dense kernels shared by the measures and quantizers.
//!
//! All reductions run over fixed-size row blocks combined in block order, so
//! results never depend on how many worker threads rayon happens to use.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::pointcloud::PointCloud;

/// Rows per parallel work item. Part of the numerical contract: changing it
/// changes summation order.
pub(crate) const BLOCK_ROWS: usize = 1024;

/// `out (ra × rb) = a (ra × w) · bᵀ (w × rb)`, all row-major.
pub(crate) fn gemm_nt(a: &[f64], ra: usize, b: &[f64], rb: usize, w: usize, out: &mut [f64]) {
    assert_eq!(a.len(), ra * w);
    assert_eq!(b.len(), rb * w);
    assert_eq!(out.len(), ra * rb);
    if ra == 0 || rb == 0 {
        return;
    }
    if w == 0 {
        out.fill(0.0);
        return;
    }
    // SAFETY: the asserts above guarantee every strided access stays in bounds.
    unsafe {
        matrixmultiply::dgemm(
            ra,
            w,
            rb,
            1.0,
            a.as_ptr(),
            w as isize,
            1,
            b.as_ptr(),
            1,
            w as isize,
            0.0,
            out.as_mut_ptr(),
            rb as isize,
            1,
        );
    }
}

/// `out (w × w) += aᵀ a` for a row-major `r × w` block.
pub(crate) fn gram_accumulate(a: &[f64], r: usize, w: usize, out: &mut [f64]) {
    assert_eq!(a.len(), r * w);
    assert_eq!(out.len(), w * w);
    if r == 0 || w == 0 {
        return;
    }
    // SAFETY: bounds follow from the asserts.
    unsafe {
        matrixmultiply::dgemm(
            w,
            r,
            w,
            1.0,
            a.as_ptr(),
            1,
            w as isize,
            a.as_ptr(),
            w as isize,
            1,
            1.0,
            out.as_mut_ptr(),
            w as isize,
            1,
        );
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        let d0 = x[0] - y[0];
        let d1 = x[1] - y[1];
        let d2 = x[2] - y[2];
        let d3 = x[3] - y[3];
        acc[0] += d0 * d0;
        acc[1] += d1 * d1;
        acc[2] += d2 * d2;
        acc[3] += d3 * d3;
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += (x - y) * (x - y);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Rows `[start, end)` of `cloud`, columns `cols`, widened to `f64`.
pub(crate) fn block_f64(
    cloud: &PointCloud,
    start: usize,
    end: usize,
    cols: std::ops::Range<usize>,
) -> Vec<f64> {
    let mut out = Vec::with_capacity((end - start) * cols.len());
    for i in start..end {
        out.extend(cloud.row(i)[cols.clone()].iter().map(|&v| v as f64));
    }
    out
}

/// Block boundaries `[0, BLOCK_ROWS, 2·BLOCK_ROWS, …, n]`.
pub(crate) fn blocks(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(BLOCK_ROWS))
        .map(|b| (b * BLOCK_ROWS, ((b + 1) * BLOCK_ROWS).min(n)))
        .collect()
}

/// Column means of a row-major `n × w` `f64` matrix.
pub(crate) fn column_means(data: &[f64], n: usize, w: usize) -> Vec<f64> {
    let partials: Vec<Vec<f64>> = blocks(n)
        .into_par_iter()
        .map(|(s, e)| {
            let mut acc = vec![0.0; w];
            for row in data[s * w..e * w].chunks_exact(w) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            acc
        })
        .collect();
    let mut mean = vec![0.0; w];
    for p in partials {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    mean
}

/// Partial Gram sums are merged in groups so memory stays bounded at large
/// `w`; the grouping depends only on `n` and `w`.
fn merge_grams(
    n: usize,
    w: usize,
    block: impl Fn(usize, usize) -> Vec<f64> + Sync,
) -> Vec<f64> {
    let bl = blocks(n);
    // at most ~64 MiB of partials in flight
    let group = ((64usize << 20) / (8 * w * w).max(1)).clamp(1, 64);
    let mut total = vec![0.0; w * w];
    for chunk in bl.chunks(group) {
        let partials: Vec<Vec<f64>> = chunk
            .par_iter()
            .map(|&(s, e)| {
                let a = block(s, e);
                let mut g = vec![0.0; w * w];
                gram_accumulate(&a, e - s, w, &mut g);
                g
            })
            .collect();
        for p in partials {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
    }
    total
}

fn finish_covariance(mut g: Vec<f64>, n: usize, w: usize) -> DMatrix<f64> {
    let denom = (n - 1) as f64;
    // symmetrize against rounding in the kernel
    for i in 0..w {
        for j in i + 1..w {
            let v = 0.5 * (g[i * w + j] + g[j * w + i]);
            g[i * w + j] = v;
            g[j * w + i] = v;
        }
    }
    g.iter_mut().for_each(|v| *v /= denom);
    DMatrix::from_row_slice(w, w, &g)
}

/// `(n − 1)`-normalized covariance of the mean-centered cloud. Requires n ≥ 2.
pub(crate) fn covariance(cloud: &PointCloud) -> DMatrix<f64> {
    let (n, d) = (cloud.n(), cloud.d());
    let sums: Vec<Vec<f64>> = blocks(n)
        .into_par_iter()
        .map(|(s, e)| {
            let mut acc = vec![0.0; d];
            for i in s..e {
                for (a, &v) in acc.iter_mut().zip(cloud.row(i)) {
                    *a += v as f64;
                }
            }
            acc
        })
        .collect();
    let mut mean = vec![0.0; d];
    for p in sums {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mean_ref = &mean;
    let g = merge_grams(n, d, |s, e| {
        let mut a = block_f64(cloud, s, e, 0..d);
        for row in a.chunks_exact_mut(d) {
            for (v, m) in row.iter_mut().zip(mean_ref) {
                *v -= m;
            }
        }
        a
    });
    finish_covariance(g, n, d)
}

/// Covariance of a row-major `n × w` `f64` matrix. Requires n ≥ 2.
pub(crate) fn covariance_f64(data: &[f64], n: usize, w: usize) -> DMatrix<f64> {
    let mean = column_means(data, n, w);
    let mean_ref = &mean;
    let g = merge_grams(n, w, |s, e| {
        let mut a = data[s * w..e * w].to_vec();
        for row in a.chunks_exact_mut(w) {
            for (v, m) in row.iter_mut().zip(mean_ref) {
                *v -= m;
            }
        }
        a
    });
    finish_covariance(g, n, w)
}

/// Eigenvalues of a symmetric matrix, descending.
pub(crate) fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut vals: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    vals
}

/// Eigenpairs of a symmetric matrix, descending by eigenvalue. Eigenvectors
/// are the columns of the returned matrix.
pub(crate) fn symmetric_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// A row-major set of `k` centroids of width `w` with cached squared norms.
#[derive(Clone, Debug)]
pub(crate) struct CentroidSet {
    pub k: usize,
    pub w: usize,
    pub data: Vec<f64>,
    pub norms: Vec<f64>,
}

impl CentroidSet {
    pub fn new(data: Vec<f64>, k: usize, w: usize) -> Self {
        assert_eq!(data.len(), k * w);
        let norms = data.chunks_exact(w.max(1)).take(k).map(|c| dot(c, c)).collect();
        Self { k, w, data, norms }
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.data[c * self.w..(c + 1) * self.w]
    }
}

/// Exact nearest centroid for each row of a row-major `r × w` block.
///
/// Candidates are screened with the `‖c‖² − 2⟨x, c⟩` expansion (one gemm),
/// then every candidate within a rounding margin of the best score is
/// re-ranked by its directly computed squared distance. Ties go to the
/// lowest index.
pub(crate) fn nearest_block(
    points: &[f64],
    r: usize,
    cents: &CentroidSet,
    codes: &mut [u32],
    dists: &mut [f64],
) {
    let (k, w) = (cents.k, cents.w);
    let mut dots = vec![0.0; r * k];
    gemm_nt(points, r, &cents.data, k, w, &mut dots);
    let max_norm = cents.norms.iter().copied().fold(0.0, f64::max);
    for i in 0..r {
        let x = &points[i * w..(i + 1) * w];
        let row = &dots[i * k..(i + 1) * k];
        let mut best = f64::INFINITY;
        for (c, &dt) in row.iter().enumerate() {
            let s = cents.norms[c] - 2.0 * dt;
            if s < best {
                best = s;
            }
        }
        let margin = 1e-9 * (dot(x, x) + max_norm) + f64::MIN_POSITIVE;
        let mut arg = 0usize;
        let mut arg_d = f64::INFINITY;
        for (c, &dt) in row.iter().enumerate() {
            if cents.norms[c] - 2.0 * dt <= best + margin {
                let dd = sq_dist(x, cents.centroid(c));
                if dd < arg_d {
                    arg_d = dd;
                    arg = c;
                }
            }
        }
        codes[i] = arg as u32;
        dists[i] = arg_d;
    }
}
