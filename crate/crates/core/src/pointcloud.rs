//! Point clouds: storage, file formats, synthetic generators and the
//! noise-interpolation operator.
//!
//! Values are held as `f32` (the usual embedding export precision); every
//! measure widens to `f64` before doing arithmetic.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::random::{self, STREAM_MIXTURE, STREAM_NOISE, STREAM_UNIFORM};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"LGPC";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8;

/// An `n × d` row-major matrix of finite values plus a provenance label.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    data: Vec<f32>,
    n: usize,
    d: usize,
    label: String,
}

impl PointCloud {
    /// Wraps a row-major buffer. Fails on empty shapes, a length mismatch or
    /// any non-finite entry.
    pub fn new(data: Vec<f32>, n: usize, d: usize, label: impl Into<String>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Config(format!("point cloud must be non-empty, got {n}×{d}")));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, found: data.len() });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self { data, n, d, label: label.into() })
    }

    /// Builds a cloud from `f64` rows, rounding to `f32`.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], label: impl Into<String>) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n * d);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::Data(format!("row {i} has {} values, expected {d}", row.len())));
            }
            data.extend(row.iter().map(|&v| v as f32));
        }
        Self::new(data, n, d, label)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.d)
    }

    /// Column `j` widened to `f64`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j] as f64).collect()
    }

    /// Columns `range` of every row, as a new cloud.
    pub fn columns(&self, range: std::ops::Range<usize>) -> PointCloud {
        let w = range.len();
        let mut data = Vec::with_capacity(self.n * w);
        for r in self.rows() {
            data.extend_from_slice(&r[range.clone()]);
        }
        PointCloud { data, n: self.n, d: w, label: self.label.clone() }
    }

    /// Selected rows, in the order given.
    pub fn select_rows(&self, idx: &[usize]) -> PointCloud {
        let mut data = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        PointCloud { data, n: idx.len(), d: self.d, label: self.label.clone() }
    }

    /// Entrywise `c · x`.
    pub fn scaled(&self, c: f64) -> Result<PointCloud> {
        let data = self.data.iter().map(|&v| (v as f64 * c) as f32).collect();
        PointCloud::new(data, self.n, self.d, self.label.clone())
    }

    /// Loads a matrix file.
    pub fn load(path: impl AsRef<Path>, format: MatrixFormat) -> Result<Self> {
        load_matrix(path.as_ref(), format)
    }

    pub fn save(&self, path: impl AsRef<Path>, format: MatrixFormat) -> Result<()> {
        let file = File::create(path.as_ref())?;
        let mut w = BufWriter::new(file);
        match format {
            MatrixFormat::Binary => self.write_binary(&mut w)?,
            MatrixFormat::Csv => self.write_csv(&mut w)?,
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&(self.d as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        for row in self.rows() {
            let mut first = true;
            for v in row {
                if !first {
                    w.write_all(b",")?;
                }
                first = false;
                // `Display` for f32 prints the shortest string that round-trips.
                write!(w, "{v}")?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_binary(bytes: &[u8], label: impl Into<String>) -> Result<Self> {
        let err = |offset: usize, message: String| Error::Parse {
            location: format!("byte {offset}"),
            message,
        };
        if bytes.len() < HEADER_LEN {
            return Err(err(0, format!("file is {} bytes, shorter than the {HEADER_LEN}-byte header", bytes.len())));
        }
        if &bytes[0..4] != MAGIC {
            return Err(err(0, "bad magic, expected \"LGPC\"".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(err(4, format!("unsupported version {version}")));
        }
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        if rows == 0 || cols == 0 {
            return Err(err(8, format!("empty shape {rows}×{cols}")));
        }
        let count = rows
            .checked_mul(cols)
            .and_then(|c| usize::try_from(c).ok())
            .ok_or_else(|| err(8, format!("shape {rows}×{cols} overflows")))?;
        let expected = count
            .checked_mul(4)
            .and_then(|p| p.checked_add(HEADER_LEN))
            .ok_or_else(|| err(8, format!("shape {rows}×{cols} overflows")))?;
        if bytes.len() != expected {
            return Err(err(
                bytes.len().min(expected),
                format!("payload length mismatch: header implies {expected} bytes, file has {}", bytes.len()),
            ));
        }
        let mut data = Vec::with_capacity(count);
        for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(err(HEADER_LEN + 4 * i, format!("non-finite value {v}")));
            }
            data.push(v);
        }
        PointCloud::new(data, rows as usize, cols as usize, label)
    }

    pub fn read_csv(reader: impl BufRead, label: impl Into<String>) -> Result<Self> {
        let mut data = Vec::new();
        let mut d = 0usize;
        let mut n = 0usize;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut width = 0usize;
            for (col, tok) in line.split(',').enumerate() {
                let tok = tok.trim();
                let v: f32 = tok.parse().map_err(|_| Error::Parse {
                    location: format!("line {}, field {}", lineno + 1, col + 1),
                    message: format!("not a number: {tok:?}"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        location: format!("line {}, field {}", lineno + 1, col + 1),
                        message: format!("non-finite value {tok:?}"),
                    });
                }
                data.push(v);
                width += 1;
            }
            if n == 0 {
                d = width;
            } else if width != d {
                return Err(Error::Parse {
                    location: format!("line {}", lineno + 1),
                    message: format!("ragged row: {width} fields, expected {d}"),
                });
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Parse { location: "line 1".into(), message: "no data rows".into() });
        }
        PointCloud::new(data, n, d, label)
    }
}

/// On-disk matrix encodings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    /// `LGPC` header followed by little-endian `f32` payload.
    Binary,
    /// One row per line, comma separated, no header.
    Csv,
}

impl MatrixFormat {
    /// `.csv` (any case) selects CSV; everything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => MatrixFormat::Csv,
            _ => MatrixFormat::Binary,
        }
    }
}

pub fn load_matrix(path: &Path, format: MatrixFormat) -> Result<PointCloud> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = File::open(path)?;
    match format {
        MatrixFormat::Binary => {
            let mut bytes = Vec::new();
            BufReader::new(file).read_to_end(&mut bytes)?;
            PointCloud::read_binary(&bytes, label)
        }
        MatrixFormat::Csv => PointCloud::read_csv(BufReader::new(file), label),
    }
}

/// I.i.d. uniform points on `[low, high)^d`.
pub fn generate_uniform(n: usize, d: usize, low: f64, high: f64, seed: u64) -> Result<PointCloud> {
    if n == 0 || d == 0 {
        return Err(Error::Config(format!("need n ≥ 1 and d ≥ 1, got {n}×{d}")));
    }
    if !(low < high) || !low.is_finite() || !high.is_finite() {
        return Err(Error::Config(format!("need finite low < high, got [{low}, {high})")));
    }
    let mut rng = random::rng(seed, STREAM_UNIFORM);
    let upper = high as f32;
    let data = (0..n * d)
        .map(|_| {
            let u: f64 = rng.random();
            let v = (low + u * (high - low)) as f32;
            // rounding to f32 may land on the open upper bound
            if v >= upper { upper.next_down() } else { v }
        })
        .collect();
    PointCloud::new(data, n, d, format!("uniform(n={n},d={d},low={low},high={high},seed={seed})"))
}

/// One Gaussian component of a [`MixtureSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Per-axis standard deviations.
    pub scale: Vec<f64>,
}

/// Axis-aligned Gaussian mixture recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<MixtureComponent>,
    pub n: usize,
    pub seed: u64,
}

impl MixtureSpec {
    /// Equal-weight mixture of `components` isotropic blobs with common
    /// standard deviation `scale`. Means are drawn from `N(0, separation²)`
    /// per axis using `mean_seed`, so they can be held fixed while `scale`
    /// varies.
    pub fn isotropic(
        components: usize,
        d: usize,
        scale: f64,
        separation: f64,
        n: usize,
        mean_seed: u64,
        seed: u64,
    ) -> Self {
        let mut rng = random::rng(mean_seed, STREAM_MIXTURE + 0x10);
        let comps = (0..components)
            .map(|_| MixtureComponent {
                weight: 1.0 / components as f64,
                mean: (0..d)
                    .map(|_| separation * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
                scale: vec![scale; d],
            })
            .collect();
        MixtureSpec { components: comps, n, seed }
    }

    pub fn validate(&self) -> Result<usize> {
        let first = self
            .components
            .first()
            .ok_or_else(|| Error::Config("mixture has no components".into()))?;
        let d = first.mean.len();
        if d == 0 || self.n == 0 {
            return Err(Error::Config("mixture needs d ≥ 1 and n ≥ 1".into()));
        }
        let mut total = 0.0;
        for (i, c) in self.components.iter().enumerate() {
            if c.mean.len() != d || c.scale.len() != d {
                return Err(Error::Config(format!("component {i} has inconsistent dimensionality")));
            }
            if !(c.weight >= 0.0) || !c.weight.is_finite() {
                return Err(Error::Config(format!("component {i} has invalid weight {}", c.weight)));
            }
            if c.scale.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
                return Err(Error::Config(format!("component {i} has a negative or non-finite scale")));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::Config(format!("component {i} has a non-finite mean")));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("weights sum to {total}, expected 1")));
        }
        Ok(d)
    }
}

/// Samples `spec.n` points: a component by weight, then its Gaussian.
pub fn generate_mixture(spec: &MixtureSpec) -> Result<PointCloud> {
    let d = spec.validate()?;
    let weights: Vec<f64> = spec.components.iter().map(|c| c.weight).collect();
    let pick = WeightedIndex::new(&weights).map_err(|e| Error::Config(format!("weights: {e}")))?;
    let mut rng = random::rng(spec.seed, STREAM_MIXTURE);
    let mut data = Vec::with_capacity(spec.n * d);
    for _ in 0..spec.n {
        let c = &spec.components[pick.sample(&mut rng)];
        for (m, s) in c.mean.iter().zip(&c.scale) {
            let z: f64 = rng.sample(StandardNormal);
            data.push((m + s * z) as f32);
        }
    }
    PointCloud::new(
        data,
        spec.n,
        d,
        format!("mixture(components={},n={},seed={})", spec.components.len(), spec.n, spec.seed),
    )
}

/// Entrywise `(1 − α)·x + α·ε` with `ε ~ N(0, 1)` drawn in row-major order
/// from `seed`. Works on any matrix; the draw sequence depends only on the
/// seed and the entry count.
pub fn interpolate_noise(base: &PointCloud, alpha: f64, seed: u64) -> Result<PointCloud> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let mut rng = random::rng(seed, STREAM_NOISE);
    let keep = 1.0 - alpha;
    let data = base
        .data
        .iter()
        .map(|&x| {
            let eps: f64 = rng.sample(StandardNormal);
            (keep * x as f64 + alpha * eps) as f32
        })
        .collect();
    PointCloud::new(
        data,
        base.n,
        base.d,
        format!("{}+noise(alpha={alpha},seed={seed})", base.label),
    )
}
