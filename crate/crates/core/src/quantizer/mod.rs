//! Vector quantizers and the per-cell statistics the clustering measures
//! are built on.
//!
//! Two model kinds share one representation: a product quantizer splits the
//! dimensions into `m` contiguous ranges with a `k`-centroid codebook each,
//! and an additive quantizer keeps `m` full-width codebooks whose selected
//! centroids sum to the reconstruction.

mod additive;
mod kmeans;
mod product;

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, CentroidSet};
use crate::pointcloud::PointCloud;
use crate::{Error, Result};

pub use additive::{train_additive, AdditiveConfig};
pub use kmeans::{kmeans, KMeans};
pub use product::{split_dims, train_product, ProductConfig};

pub(crate) use additive::Encoder as AdditiveEncoder;

const MAGIC: &[u8; 4] = b"LGQM";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantizerKind {
    Product,
    Additive,
}

impl QuantizerKind {
    /// Short CLI name.
    pub fn short(self) -> &'static str {
        match self {
            QuantizerKind::Product => "pq",
            QuantizerKind::Additive => "aq",
        }
    }
}

/// Trained codebooks.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizationModel {
    pub kind: QuantizerKind,
    pub m: usize,
    pub k: usize,
    pub d: usize,
    /// Dimension range each codebook covers: a partition of `0..d` for
    /// product models, `0..d` repeated for additive ones.
    pub ranges: Vec<Range<usize>>,
    /// `m` codebooks, each `k × width` row-major.
    pub codebooks: Vec<Vec<f32>>,
    /// ICM sweeps applied when encoding with an additive model.
    pub icm_sweeps: usize,
}

impl QuantizationModel {
    pub fn width(&self, j: usize) -> usize {
        self.ranges[j].len()
    }

    pub fn centroid(&self, j: usize, c: usize) -> &[f32] {
        let w = self.width(j);
        &self.codebooks[j][c * w..(c + 1) * w]
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("invalid quantization model: {m}")));
        if self.m == 0 || self.k == 0 || self.d == 0 {
            return bad("m, k and d must be positive".into());
        }
        if self.ranges.len() != self.m || self.codebooks.len() != self.m {
            return bad("codebook count does not match m".into());
        }
        match self.kind {
            QuantizerKind::Product => {
                let mut next = 0;
                for r in &self.ranges {
                    if r.start != next || r.end <= r.start {
                        return bad("product ranges must partition 0..d contiguously".into());
                    }
                    next = r.end;
                }
                if next != self.d {
                    return bad("product ranges must cover 0..d".into());
                }
            }
            QuantizerKind::Additive => {
                if self.ranges.iter().any(|r| *r != (0..self.d)) {
                    return bad("additive codebooks must span all dimensions".into());
                }
            }
        }
        for (j, cb) in self.codebooks.iter().enumerate() {
            if cb.len() != self.k * self.width(j) {
                return bad(format!("codebook {j} has the wrong size"));
            }
            if cb.iter().any(|v| !v.is_finite()) {
                return bad(format!("codebook {j} has a non-finite entry"));
            }
        }
        Ok(())
    }

    pub(crate) fn centroid_sets(&self) -> Vec<CentroidSet> {
        (0..self.m)
            .map(|j| {
                let data = self.codebooks[j].iter().map(|&v| v as f64).collect();
                CentroidSet::new(data, self.k, self.width(j))
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Layout: `"LGQM"`, u32 version, u8 kind (0 product, 1 additive),
    /// u32 m, u32 k, u64 d, u32 icm_sweeps, m × (u64 start, u64 end), then
    /// every codebook's centroids as little-endian `f32`, row-major.
    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[match self.kind {
            QuantizerKind::Product => 0u8,
            QuantizerKind::Additive => 1u8,
        }])?;
        w.write_all(&(self.m as u32).to_le_bytes())?;
        w.write_all(&(self.k as u32).to_le_bytes())?;
        w.write_all(&(self.d as u64).to_le_bytes())?;
        w.write_all(&(self.icm_sweeps as u32).to_le_bytes())?;
        for r in &self.ranges {
            w.write_all(&(r.start as u64).to_le_bytes())?;
            w.write_all(&(r.end as u64).to_le_bytes())?;
        }
        for cb in &self.codebooks {
            for v in cb {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |len: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + len).ok_or_else(|| Error::Parse {
                location: format!("byte {pos}"),
                message: "unexpected end of model file".into(),
            })?;
            pos += len;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(Error::Parse { location: "byte 0".into(), message: "bad magic, expected \"LGQM\"".into() });
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Parse { location: "byte 4".into(), message: format!("unsupported version {version}") });
        }
        let kind = match take(1)?[0] {
            0 => QuantizerKind::Product,
            1 => QuantizerKind::Additive,
            other => {
                return Err(Error::Parse { location: "byte 8".into(), message: format!("unknown kind {other}") })
            }
        };
        let m = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let k = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let d = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let icm_sweeps = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        if m > 1 << 16 || d > 1 << 24 || k > 1 << 24 {
            return Err(Error::Parse { location: "byte 9".into(), message: format!("implausible shape m={m} k={k} d={d}") });
        }
        let mut ranges = Vec::with_capacity(m);
        for _ in 0..m {
            let s = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            let e = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            if e < s || e > d {
                return Err(Error::Parse { location: "dimension ranges".into(), message: format!("bad range {s}..{e}") });
            }
            ranges.push(s..e);
        }
        let mut codebooks = Vec::with_capacity(m);
        for r in &ranges {
            let raw = take(4 * k * r.len())?;
            codebooks.push(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect());
        }
        if pos != bytes.len() {
            return Err(Error::Parse { location: format!("byte {pos}"), message: "trailing bytes after payload".into() });
        }
        let model = QuantizationModel { kind, m, k, d, ranges, codebooks, icm_sweeps };
        model.validate()?;
        Ok(model)
    }
}

/// Codes for every point plus the total squared reconstruction error.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub n: usize,
    pub m: usize,
    /// `n × m`, row-major.
    pub codes: Vec<u32>,
    pub recon_error_total: f64,
}

impl Assignment {
    pub fn codes_of(&self, i: usize) -> &[u32] {
        &self.codes[i * self.m..(i + 1) * self.m]
    }
}

/// Per-cell counts, centroid spacing and normalized per-point error.
#[derive(Clone, Debug, PartialEq)]
pub struct CellStats {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    /// `m × k` point counts.
    pub counts: Vec<u64>,
    /// `m × k` distance from each centroid to its nearest sibling in the same
    /// codebook (infinite when `k = 1`).
    pub nn_dist: Vec<f64>,
    /// `‖x − x′‖ / max‖x − x′‖`, all zero when the maximum is zero.
    pub per_point_error: Vec<f64>,
    /// The unnormalized maximum `max‖x − x′‖`.
    pub max_error: f64,
}

impl CellStats {
    pub fn counts_of(&self, j: usize) -> &[u64] {
        &self.counts[j * self.k..(j + 1) * self.k]
    }

    /// Builds stats from raw counts alone (useful for count-only measures).
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let m = counts.len();
        let k = counts.first().map_or(0, Vec::len);
        if m == 0 || k == 0 || counts.iter().any(|c| c.len() != k) {
            return Err(Error::Config("counts must be a non-empty m × k table".into()));
        }
        let n = counts[0].iter().sum::<u64>() as usize;
        if counts.iter().any(|c| c.iter().sum::<u64>() as usize != n) {
            return Err(Error::Data("every codebook's counts must sum to the same n".into()));
        }
        Ok(CellStats {
            n,
            m,
            k,
            counts: counts.concat(),
            nn_dist: vec![f64::INFINITY; m * k],
            per_point_error: vec![],
            max_error: 0.0,
        })
    }
}

/// Per-point reconstruction for a model and codes, widened to `f64`.
pub(crate) fn reconstruct_into(model: &QuantizationModel, sets: &[CentroidSet], codes: &[u32], out: &mut [f64]) {
    match model.kind {
        QuantizerKind::Product => {
            for (j, r) in model.ranges.iter().enumerate() {
                out[r.clone()].copy_from_slice(sets[j].centroid(codes[j] as usize));
            }
        }
        QuantizerKind::Additive => {
            out.fill(0.0);
            for (j, set) in sets.iter().enumerate() {
                for (o, v) in out.iter_mut().zip(set.centroid(codes[j] as usize)) {
                    *o += v;
                }
            }
        }
    }
}

/// Reconstructions `x′` for every point, as a cloud.
pub fn reconstruct(model: &QuantizationModel, assignment: &Assignment) -> Result<PointCloud> {
    let sets = model.centroid_sets();
    let mut data = Vec::with_capacity(assignment.n * model.d);
    let mut buf = vec![0.0; model.d];
    for i in 0..assignment.n {
        reconstruct_into(model, &sets, assignment.codes_of(i), &mut buf);
        data.extend(buf.iter().map(|&v| v as f32));
    }
    PointCloud::new(data, assignment.n, model.d, "reconstruction")
}

/// Codes for every point: exact nearest centroid per subspace for product
/// models; greedy residual encoding refined by ICM sweeps for additive ones.
pub fn encode(model: &QuantizationModel, cloud: &PointCloud) -> Result<Assignment> {
    model.validate()?;
    if cloud.d() != model.d {
        return Err(Error::DimensionMismatch { expected: model.d, found: cloud.d() });
    }
    let sets = model.centroid_sets();
    let (n, m) = (cloud.n(), model.m);
    let mut codes = vec![0u32; n * m];
    match model.kind {
        QuantizerKind::Product => {
            codes.par_chunks_mut(linalg::BLOCK_ROWS * m).enumerate().for_each(|(b, cc)| {
                let s = b * linalg::BLOCK_ROWS;
                let r = cc.len() / m;
                let mut sub_codes = vec![0u32; r];
                let mut sub_d = vec![0.0; r];
                for (j, range) in model.ranges.iter().enumerate() {
                    let block = linalg::block_f64(cloud, s, s + r, range.clone());
                    linalg::nearest_block(&block, r, &sets[j], &mut sub_codes, &mut sub_d);
                    for (i, c) in sub_codes.iter().enumerate() {
                        cc[i * m + j] = *c;
                    }
                }
            });
        }
        QuantizerKind::Additive => {
            let enc = AdditiveEncoder::new(&sets, model.d);
            codes.par_chunks_mut(linalg::BLOCK_ROWS * m).enumerate().for_each(|(b, cc)| {
                let s = b * linalg::BLOCK_ROWS;
                let r = cc.len() / m;
                let block = linalg::block_f64(cloud, s, s + r, 0..model.d);
                enc.run(&block, r, cc, true, model.icm_sweeps);
            });
        }
    }
    let errs = point_errors(model, &sets, cloud, &codes);
    Ok(Assignment { n, m, codes, recon_error_total: kmeans::block_sum(&errs) })
}

/// Squared reconstruction error of every point.
pub(crate) fn point_errors(model: &QuantizationModel, sets: &[CentroidSet], cloud: &PointCloud, codes: &[u32]) -> Vec<f64> {
    let m = model.m;
    let d = model.d;
    let mut out = vec![0.0; cloud.n()];
    out.par_chunks_mut(linalg::BLOCK_ROWS).enumerate().for_each(|(b, oo)| {
        let s = b * linalg::BLOCK_ROWS;
        let mut buf = vec![0.0; d];
        let mut x = vec![0.0; d];
        for (o, e) in oo.iter_mut().enumerate() {
            let i = s + o;
            reconstruct_into(model, sets, &codes[i * m..(i + 1) * m], &mut buf);
            for (xv, &v) in x.iter_mut().zip(cloud.row(i)) {
                *xv = v as f64;
            }
            *e = linalg::sq_dist(&x, &buf);
        }
    });
    out
}

/// Encodes `cloud` and derives the cell statistics.
pub fn encode_and_stats(model: &QuantizationModel, cloud: &PointCloud) -> Result<(Assignment, CellStats)> {
    let assignment = encode(model, cloud)?;
    let stats = cell_stats(model, cloud, &assignment)?;
    Ok((assignment, stats))
}

/// Cell statistics for an existing assignment.
pub fn cell_stats(model: &QuantizationModel, cloud: &PointCloud, assignment: &Assignment) -> Result<CellStats> {
    if cloud.d() != model.d {
        return Err(Error::DimensionMismatch { expected: model.d, found: cloud.d() });
    }
    if assignment.n != cloud.n() || assignment.m != model.m {
        return Err(Error::DimensionMismatch { expected: cloud.n() * model.m, found: assignment.codes.len() });
    }
    let (m, k) = (model.m, model.k);
    let sets = model.centroid_sets();
    let mut counts = vec![0u64; m * k];
    for row in assignment.codes.chunks_exact(m) {
        for (j, &c) in row.iter().enumerate() {
            counts[j * k + c as usize] += 1;
        }
    }
    let mut nn_dist = vec![f64::INFINITY; m * k];
    for (j, set) in sets.iter().enumerate() {
        let nn: Vec<f64> = (0..k)
            .into_par_iter()
            .map(|a| {
                (0..k)
                    .filter(|&b| b != a)
                    .map(|b| linalg::sq_dist(set.centroid(a), set.centroid(b)))
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .collect();
        nn_dist[j * k..(j + 1) * k].copy_from_slice(&nn);
    }
    let errs: Vec<f64> = point_errors(model, &sets, cloud, &assignment.codes)
        .into_iter()
        .map(f64::sqrt)
        .collect();
    let max_error = errs.iter().copied().fold(0.0, f64::max);
    let per_point_error = if max_error > 0.0 {
        errs.iter().map(|e| e / max_error).collect()
    } else {
        vec![0.0; errs.len()]
    };
    Ok(CellStats { n: cloud.n(), m, k, counts, nn_dist, per_point_error, max_error })
}

/// Shared per-run record of how training went.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Objective histories: one per subspace (product) or one overall
    /// (additive), starting with the initial assignment.
    pub objective_history: Vec<Vec<f64>>,
    /// Points actually used for training.
    pub train_points: usize,
    /// Additive iterations where the joint least-squares update was rejected
    /// and per-codebook residual means were used instead.
    pub fallback_updates: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_model() -> QuantizationModel {
        QuantizationModel {
            kind: QuantizerKind::Product,
            m: 1,
            k: 2,
            d: 1,
            ranges: vec![0..1],
            codebooks: vec![vec![0.0, 10.0]],
            icm_sweeps: 0,
        }
    }

    #[test]
    fn hand_checked_error_magnitudes() {
        let cloud = PointCloud::new(vec![1.0, 9.0], 2, 1, "t").unwrap();
        let (a, s) = encode_and_stats(&line_model(), &cloud).unwrap();
        assert_eq!(a.codes, vec![0, 1]);
        assert_eq!(a.recon_error_total, 2.0);
        assert_eq!(s.per_point_error, vec![1.0, 1.0]);
        assert_eq!(s.counts, vec![1, 1]);
        assert_eq!(s.nn_dist, vec![10.0, 10.0]);
    }

    #[test]
    fn perfect_model_has_zero_errors() {
        let cloud = PointCloud::new(vec![0.0, 10.0, 10.0], 3, 1, "t").unwrap();
        let (a, s) = encode_and_stats(&line_model(), &cloud).unwrap();
        assert_eq!(a.recon_error_total, 0.0);
        assert!(s.per_point_error.iter().all(|&e| e == 0.0));
        assert_eq!(s.max_error, 0.0);
        assert_eq!(s.counts_of(0).iter().sum::<u64>(), 3);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let cloud = PointCloud::new(vec![0.0; 4], 2, 2, "t").unwrap();
        assert!(matches!(encode(&line_model(), &cloud), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn model_file_round_trip_and_corruption() {
        let mut model = line_model();
        model.kind = QuantizerKind::Additive;
        model.icm_sweeps = 3;
        let mut bytes = Vec::new();
        model.write(&mut bytes).unwrap();
        assert_eq!(QuantizationModel::from_bytes(&bytes).unwrap(), model);
        assert!(QuantizationModel::from_bytes(&bytes[..bytes.len() - 2]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'Q';
        assert!(QuantizationModel::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(QuantizationModel::from_bytes(&bad).is_err());
    }

    #[test]
    fn counts_table_checks() {
        assert!(CellStats::from_counts(vec![vec![1, 2], vec![3, 0]]).is_ok());
        assert!(CellStats::from_counts(vec![vec![1, 2], vec![3, 1]]).is_err());
        assert!(CellStats::from_counts(vec![]).is_err());
    }
}
