//! Whole-cloud spread measures computed from the sample covariance:
//! eigenvalue early enrichment (EEE), the Vasicek ratio mean-square (VRM)
//! and IsoScore.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::pointcloud::PointCloud;
use crate::{Error, Result};

/// Eigenvalues of a sample covariance, descending and nonnegative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenSpectrum {
    pub values: Vec<f64>,
    pub total_variance: f64,
}

impl EigenSpectrum {
    /// Sorts descending and clamps negative values (solver noise) to zero.
    pub fn from_values(mut values: Vec<f64>) -> Self {
        values.iter_mut().for_each(|v| *v = v.max(0.0));
        values.sort_by(|a, b| b.total_cmp(a));
        let total_variance = values.iter().sum();
        Self { values, total_variance }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn require_two(cloud: &PointCloud) -> Result<()> {
    if cloud.n() < 2 {
        return Err(Error::InsufficientData(format!(
            "covariance needs at least 2 points, got {}",
            cloud.n()
        )));
    }
    Ok(())
}

/// Eigenvalues of the `(n − 1)`-normalized covariance of the centered cloud.
pub fn eigen_spectrum(cloud: &PointCloud) -> Result<EigenSpectrum> {
    require_two(cloud)?;
    let cov = linalg::covariance(cloud);
    Ok(EigenSpectrum::from_values(linalg::symmetric_eigenvalues(&cov)))
}

/// Normalized area between the cumulative eigenvalue curve and the straight
/// line an evenly spread cloud would trace.
///
/// The area is the sum over `i = 1..d` of `cumsum[i] − i·v/d`, divided by
/// `d·v/2`. Eigenvalues below `1e-12` of the largest are treated as zero.
/// Zero at perfectly even spread; `(d − 1)/d` when one axis carries all
/// variance.
pub fn eee(spectrum: &EigenSpectrum) -> Result<f64> {
    let d = spectrum.dim();
    if d == 0 {
        return Err(Error::Undefined("EEE of an empty spectrum".into()));
    }
    let largest = spectrum.values.iter().copied().fold(0.0, f64::max);
    let floor = 1e-12 * largest;
    let vals: Vec<f64> = spectrum
        .values
        .iter()
        .map(|&v| if v < floor { 0.0 } else { v })
        .collect();
    let v: f64 = vals.iter().sum();
    if !(v > 0.0) {
        return Err(Error::Undefined("EEE with zero total variance".into()));
    }
    let mut cum = 0.0;
    let mut area = 0.0;
    for (i, x) in vals.iter().enumerate() {
        cum += x;
        area += cum - (i + 1) as f64 * v / d as f64;
    }
    Ok((area / (0.5 * d as f64 * v)).clamp(0.0, 1.0))
}

/// Vasicek spacing estimate of differential entropy from a sorted sample,
/// with window `m` and out-of-range order statistics clamped to the sample
/// extremes.
pub fn vasicek_entropy(sorted: &[f64], m: usize) -> f64 {
    let n = sorted.len();
    let scale = n as f64 / (2.0 * m as f64);
    let mut h = 0.0;
    for i in 0..n {
        let hi = sorted[(i + m).min(n - 1)];
        let lo = sorted[i.saturating_sub(m)];
        h += (scale * (hi - lo)).ln();
    }
    h / n as f64
}

/// Differential entropy of a normal distribution with variance `var`.
pub fn normal_entropy(var: f64) -> f64 {
    0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * var).ln()
}

/// Result of [`vrm`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VrmResult {
    pub value: f64,
    pub window: usize,
    /// Dimensions left out because their ratio is undefined (zero variance,
    /// tied spacings or a zero reference entropy).
    pub excluded_dims: usize,
}

/// Default Vasicek window: `⌊√n⌋`, capped so that it stays below `n/2`.
pub fn default_vrm_window(n: usize) -> usize {
    let w = (n as f64).sqrt().floor() as usize;
    w.min(n.div_ceil(2).saturating_sub(1)).max(1)
}

/// Mean over dimensions of `(1 − H_vas / H_ref)²`, where `H_ref` is the
/// entropy of a normal with the dimension's sample variance.
pub fn vrm(cloud: &PointCloud, window: Option<usize>) -> Result<VrmResult> {
    let n = cloud.n();
    if n < 4 {
        return Err(Error::InsufficientData(format!("VRM needs at least 4 points, got {n}")));
    }
    let m = match window {
        Some(0) => return Err(Error::Config("VRM window must be positive".into())),
        Some(w) if 2 * w >= n => {
            return Err(Error::Config(format!("VRM window {w} must be below n/2 = {}", n as f64 / 2.0)))
        }
        Some(w) => w,
        None => default_vrm_window(n),
    };
    let terms: Vec<Option<f64>> = (0..cloud.d())
        .into_par_iter()
        .map(|j| {
            let mut col = cloud.column(j);
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            if !(var > 0.0) {
                return None;
            }
            col.sort_by(|a, b| a.total_cmp(b));
            let h = vasicek_entropy(&col, m);
            let reference = normal_entropy(var);
            if !h.is_finite() || reference == 0.0 {
                return None;
            }
            Some((1.0 - h / reference).powi(2))
        })
        .collect();
    let used: Vec<f64> = terms.iter().flatten().copied().collect();
    let excluded_dims = terms.len() - used.len();
    if used.is_empty() {
        return Err(Error::Undefined("VRM undefined in every dimension".into()));
    }
    Ok(VrmResult { value: used.iter().sum::<f64>() / used.len() as f64, window: m, excluded_dims })
}

/// IsoScore from per-axis variances in the principal-component basis.
///
/// The variance vector is rescaled to Euclidean length `√d`, its distance
/// from the all-ones vector gives the isotropy defect, and the defect maps
/// onto `[0, 1]` with 1 meaning every direction is used equally.
pub fn isoscore_from_variances(pc_variances: &[f64]) -> Result<f64> {
    let d = pc_variances.len();
    if d < 2 {
        return Err(Error::InsufficientData("IsoScore needs d ≥ 2".into()));
    }
    let norm = pc_variances.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::Undefined("IsoScore of a zero covariance".into()));
    }
    let df = d as f64;
    let root = df.sqrt();
    let defect_sq = pc_variances
        .iter()
        .map(|v| (v * root / norm - 1.0).powi(2))
        .sum::<f64>()
        / (2.0 * (df - root));
    let score = ((df - defect_sq * (df - root)).powi(2) - df) / (df * (df - 1.0));
    Ok(score.clamp(0.0, 1.0))
}

/// Per-axis variances after rotating onto the principal axes: the diagonal
/// of `QᵀΣQ` for the eigenvector matrix `Q`.
fn principal_variances(cov: &DMatrix<f64>) -> Vec<f64> {
    let (_, q) = linalg::symmetric_eigen(cov);
    (0..q.ncols())
        .map(|c| {
            let col = q.column(c);
            (cov * col).dot(&col)
        })
        .collect()
}

pub fn isoscore(cloud: &PointCloud) -> Result<f64> {
    require_two(cloud)?;
    if cloud.d() < 2 {
        return Err(Error::InsufficientData("IsoScore needs d ≥ 2".into()));
    }
    isoscore_from_variances(&principal_variances(&linalg::covariance(cloud)))
}

/// All three spread measures from a single covariance pass.
#[derive(Debug)]
pub struct SpreadMeasures {
    pub spectrum: Result<EigenSpectrum>,
    pub eee: Result<f64>,
    pub vrm: Result<VrmResult>,
    pub isoscore: Result<f64>,
}

pub fn spread_measures(cloud: &PointCloud, vrm_window: Option<usize>) -> SpreadMeasures {
    let vrm = vrm(cloud, vrm_window);
    if let Err(e) = require_two(cloud) {
        let msg = e.to_string();
        return SpreadMeasures {
            spectrum: Err(Error::InsufficientData(msg.clone())),
            eee: Err(Error::InsufficientData(msg.clone())),
            vrm,
            isoscore: Err(Error::InsufficientData(msg)),
        };
    }
    let cov = linalg::covariance(cloud);
    let spectrum = EigenSpectrum::from_values(linalg::symmetric_eigenvalues(&cov));
    let eee = eee(&spectrum);
    let isoscore = if cloud.d() < 2 {
        Err(Error::InsufficientData("IsoScore needs d ≥ 2".into()))
    } else {
        isoscore_from_variances(&principal_variances(&cov))
    };
    SpreadMeasures { spectrum: Ok(spectrum), eee, vrm, isoscore }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::interpolate_noise;

    /// Closed-form eigenvalues of a symmetric 3×3 matrix from its
    /// characteristic polynomial (trigonometric solution of the cubic).
    fn eig3(a: [[f64; 3]; 3]) -> [f64; 3] {
        let p1 = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
        let q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
        let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let mut b = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                b[i][j] = (a[i][j] - if i == j { q } else { 0.0 }) / p;
            }
        }
        let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
            - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
            + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
        let r = (det / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        [e1, 3.0 * q - e1 - e3, e3]
    }

    #[test]
    fn spectrum_of_scaled_identity_rows() {
        let s = 3f64.sqrt();
        let rows = [[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, s]];
        let pc = PointCloud::from_rows(&rows, "t").unwrap();
        // hand covariance from the f32-rounded points
        let pts: Vec<[f64; 3]> = pc.rows().map(|r| [r[0] as f64, r[1] as f64, r[2] as f64]).collect();
        let mut mean = [0.0; 3];
        for p in &pts {
            for j in 0..3 {
                mean[j] += p[j] / 3.0;
            }
        }
        let mut cov = [[0.0; 3]; 3];
        for p in &pts {
            for i in 0..3 {
                for j in 0..3 {
                    cov[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]) / 2.0;
                }
            }
        }
        let oracle = eig3(cov);
        let spec = eigen_spectrum(&pc).unwrap();
        for (got, want) in spec.values.iter().zip(oracle) {
            assert!((got - want.max(0.0)).abs() < 1e-9, "{got} vs {want}");
        }
        assert!((spec.values[0] - 1.5).abs() < 1e-6);
    }

    #[test]
    fn identical_points_have_zero_spectrum() {
        let pc = PointCloud::new(vec![2.0; 12], 4, 3, "t").unwrap();
        let spec = eigen_spectrum(&pc).unwrap();
        assert!(spec.values.iter().all(|&v| v == 0.0));
        assert!(matches!(eee(&spec), Err(Error::Undefined(_))));
        assert!(matches!(isoscore(&pc), Err(Error::Undefined(_))));
    }

    #[test]
    fn spectrum_needs_two_points() {
        let pc = PointCloud::new(vec![1.0, 2.0], 1, 2, "t").unwrap();
        assert!(matches!(eigen_spectrum(&pc), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn isotropic_gaussian_spectrum_near_one() {
        let zeros = PointCloud::new(vec![0.0; 50_000 * 8], 50_000, 8, "z").unwrap();
        let pc = interpolate_noise(&zeros, 1.0, 42).unwrap();
        let spec = eigen_spectrum(&pc).unwrap();
        assert!(spec.values.iter().all(|v| (v - 1.0).abs() < 0.1), "{:?}", spec.values);
    }

    #[test]
    fn eee_hand_values() {
        assert_eq!(eee(&EigenSpectrum::from_values(vec![1.0; 4])).unwrap(), 0.0);
        assert!((eee(&EigenSpectrum::from_values(vec![4.0, 0.0, 0.0, 0.0])).unwrap() - 0.75).abs() < 1e-15);
        assert!((eee(&EigenSpectrum::from_values(vec![2.0, 1.0, 1.0, 0.0])).unwrap() - 0.375).abs() < 1e-15);
    }

    #[test]
    fn vasicek_hand_value() {
        // window 1, n = 4: spacings with clamped ends are (1, 2, 2, 1), scale n/2m = 2
        let h = vasicek_entropy(&[1.0, 2.0, 3.0, 4.0], 1);
        let oracle = 0.25 * ((2.0f64 * 1.0).ln() + (2.0f64 * 2.0).ln() + (2.0f64 * 2.0).ln() + (2.0f64 * 1.0).ln());
        assert!((h - oracle).abs() < 1e-15);
    }

    #[test]
    fn vrm_term_is_zero_when_entropy_matches_reference() {
        let h = normal_entropy(2.5);
        assert_eq!((1.0 - h / normal_entropy(2.5)).powi(2), 0.0);
    }

    #[test]
    fn vrm_window_checks_and_constant_dims() {
        let pc = PointCloud::from_rows(&[[1.0, 5.0], [2.0, 5.0], [3.0, 5.0], [4.0, 5.0], [6.0, 5.0]], "t").unwrap();
        assert!(vrm(&pc, Some(3)).is_err());
        assert!(vrm(&pc, Some(0)).is_err());
        let r = vrm(&pc, Some(1)).unwrap();
        assert_eq!(r.excluded_dims, 1);
        let flat = PointCloud::new(vec![1.0; 10], 5, 2, "t").unwrap();
        assert!(matches!(vrm(&flat, None), Err(Error::Undefined(_))));
        assert_eq!(default_vrm_window(4), 1);
        assert_eq!(default_vrm_window(100_000), 316);
    }

    #[test]
    fn vrm_normal_sample_is_small() {
        let zeros = PointCloud::new(vec![0.0; 100_000 * 4], 100_000, 4, "z").unwrap();
        let pc = interpolate_noise(&zeros, 1.0, 3).unwrap();
        let r = vrm(&pc, None).unwrap();
        assert!(r.value <= 0.01, "{}", r.value);
    }

    #[test]
    fn isoscore_extremes() {
        assert!((isoscore_from_variances(&[1.0; 6]).unwrap() - 1.0).abs() < 1e-12);
        let mut spike = vec![0.0; 10];
        spike[0] = 3.0;
        // δ² = ((√10 − 1)² + 9) / (2(10 − √10)) = 1 ⇒ IS = ((10 − (10 − √10))² − 10)/90 = 0
        assert!(isoscore_from_variances(&spike).unwrap().abs() < 1e-12);
    }

    #[test]
    fn isoscore_deterministic_and_near_one_for_isotropic() {
        let zeros = PointCloud::new(vec![0.0; 20_000 * 5], 20_000, 5, "z").unwrap();
        let pc = interpolate_noise(&zeros, 1.0, 8).unwrap();
        let a = isoscore(&pc).unwrap();
        assert_eq!(a.to_bits(), isoscore(&pc.clone()).unwrap().to_bits());
        assert!(a > 0.98, "{a}");
    }

    #[test]
    fn principal_variances_equal_eigenvalues() {
        let base = crate::pointcloud::generate_uniform(500, 6, -1.0, 1.0, 4).unwrap();
        let stretched: Vec<f32> = base
            .rows()
            .flat_map(|r| r.iter().enumerate().map(|(j, v)| v * (j + 1) as f32).collect::<Vec<_>>())
            .collect();
        let pc = PointCloud::new(stretched, 500, 6, "t").unwrap();
        let cov = linalg::covariance(&pc);
        let (vals, vecs) = linalg::symmetric_eigen(&cov);
        let norm = cov.norm();
        for (c, lambda) in vals.iter().enumerate() {
            let q = vecs.column(c);
            let resid = (&cov * q - q * *lambda).norm();
            assert!(resid <= 1e-8 * norm, "pair {c}: {resid}");
        }
        for (a, b) in principal_variances(&cov).iter().zip(&vals) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
