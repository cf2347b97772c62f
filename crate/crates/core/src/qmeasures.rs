//! Measures computed from a quantized cloud: cell-density measures (PP,
//! PC_var, PC_kl), reconstruction measures (RS, RE, RI) and centroid/cluster
//! shape measures (CD_var, PD_EEE), plus the report they are collected in.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::pointcloud::PointCloud;
use crate::quantizer::{Assignment, CellStats, QuantizationModel, QuantizerKind};
use crate::spread::{eee, EigenSpectrum};
use crate::{Error, Result};

/// Lloyd-style patchiness over the pooled `m·k` cell counts:
/// `(m̄ + (V/m̄ − 1)) / m̄` with `m̄` the mean count and `V` the sample
/// variance (denominator `mk − 1`).
///
/// Note the inner term is `m̄ + V/m̄ − 1`, i.e. mean crowding; the ratio is
/// therefore `(m̄ − 1)/m̄` for perfectly even cells rather than 1.
pub fn point_patchiness(stats: &CellStats) -> Result<f64> {
    patchiness_of_counts(&stats.counts)
}

pub fn patchiness_of_counts(counts: &[u64]) -> Result<f64> {
    let cells = counts.len();
    if cells < 2 {
        return Err(Error::InsufficientData("patchiness needs at least 2 cells".into()));
    }
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / cells as f64;
    if !(mean > 0.0) {
        return Err(Error::Undefined("patchiness with zero mean cell density".into()));
    }
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (cells - 1) as f64;
    Ok((mean + (var / mean - 1.0)) / mean)
}

/// Odds ratios `O_i = (k − 1)·c_i/(1 − c_i)` of each codebook's normalized
/// counts, `m × k`.
fn odds(stats: &CellStats) -> Result<Vec<f64>> {
    if stats.n == 0 {
        return Err(Error::InsufficientData("no points assigned".into()));
    }
    if stats.k < 2 {
        return Err(Error::Undefined("odds ratios need k ≥ 2".into()));
    }
    let n = stats.n as f64;
    let km1 = (stats.k - 1) as f64;
    stats
        .counts
        .iter()
        .map(|&c| {
            if c as usize == stats.n {
                Err(Error::Undefined("one cell holds every point; odds ratio undefined".into()))
            } else {
                let p = c as f64 / n;
                Ok(km1 * p / (1.0 - p))
            }
        })
        .collect()
}

/// Pooled variance of the odds ratios over all `m·k` cells, divided by
/// `m(k − 1)`.
pub fn point_count_var(stats: &CellStats) -> Result<f64> {
    let o = odds(stats)?;
    let mean = o.iter().sum::<f64>() / o.len() as f64;
    Ok(o.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (stats.m * (stats.k - 1)) as f64)
}

/// KL divergence (nats) from uniform `1/k` of each codebook's odds ratios
/// normalized to a probability vector, averaged over codebooks.
pub fn point_count_kl(stats: &CellStats) -> Result<f64> {
    let o = odds(stats)?;
    let k = stats.k;
    let mut total = 0.0;
    for j in 0..stats.m {
        let row = &o[j * k..(j + 1) * k];
        let sum: f64 = row.iter().sum();
        total += row
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| {
                let p = v / sum;
                p * (p * k as f64).ln()
            })
            .sum::<f64>();
    }
    Ok(total / stats.m as f64)
}

/// Adjusted Fisher–Pearson sample skewness with the `(n − 1)` standard
/// deviation: `n Σ z³ / ((n − 1)(n − 2))`.
pub fn sample_skew(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("skew needs n ≥ 3, got {n}")));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Undefined("skew of a sample with zero spread".into()));
    }
    let z3: f64 = values.iter().map(|v| ((v - mean) / sd).powi(3)).sum();
    Ok(nf * z3 / ((nf - 1.0) * (nf - 2.0)))
}

fn require_nonzero_errors(stats: &CellStats) -> Result<()> {
    if stats.max_error == 0.0 {
        return Err(Error::Undefined("perfect reconstruction: error magnitudes are all zero".into()));
    }
    Ok(())
}

/// Skew of the normalized per-point error magnitudes.
pub fn reconstruction_skew(stats: &CellStats) -> Result<f64> {
    require_nonzero_errors(stats)?;
    sample_skew(&stats.per_point_error)
}

/// `Σ(x − x′)² / Σx²` over every entry.
pub fn reconstruction_error(cloud: &PointCloud, assignment: &Assignment) -> Result<f64> {
    if assignment.n != cloud.n() {
        return Err(Error::DimensionMismatch { expected: cloud.n(), found: assignment.n });
    }
    let energy: f64 = cloud
        .as_slice()
        .chunks(linalg::BLOCK_ROWS * cloud.d())
        .map(|c| c.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>())
        .sum();
    if !(energy > 0.0) {
        return Err(Error::Undefined("reconstruction error of an all-zero cloud".into()));
    }
    Ok(assignment.recon_error_total / energy)
}

/// Percentile `q ∈ [0, 1]` by linear interpolation between order statistics
/// of an ascending sample.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn iqr(values: &[f64]) -> Result<f64> {
    if values.len() < 4 {
        return Err(Error::InsufficientData(format!("IQR needs n ≥ 4, got {}", values.len())));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&v, 0.75) - percentile_sorted(&v, 0.25))
}

/// Interquartile range of the normalized per-point error magnitudes.
pub fn reconstruction_iqr(stats: &CellStats) -> Result<f64> {
    require_nonzero_errors(stats)?;
    iqr(&stats.per_point_error)
}

/// Variance (denominator `mk − 1`) over all centroids of the
/// nearest-sibling distance divided by the largest such distance in the
/// same codebook.
pub fn centroid_dist_var(stats: &CellStats) -> Result<f64> {
    if stats.k < 2 {
        return Err(Error::InsufficientData("centroid spacing needs k ≥ 2".into()));
    }
    let k = stats.k;
    let mut rho = Vec::with_capacity(stats.m * k);
    for j in 0..stats.m {
        let row = &stats.nn_dist[j * k..(j + 1) * k];
        let max = row.iter().copied().fold(0.0, f64::max);
        if !(max > 0.0) || !max.is_finite() {
            return Err(Error::Undefined(format!("codebook {j}: every centroid coincides with a sibling")));
        }
        rho.extend(row.iter().map(|v| v / max));
    }
    let mean = rho.iter().sum::<f64>() / rho.len() as f64;
    Ok(rho.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (rho.len() - 1) as f64)
}

/// Result of [`cluster_eee`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterEee {
    pub value: f64,
    pub included: usize,
    /// Clusters with too few points or zero variance.
    pub skipped: usize,
    pub min_cluster: usize,
}

/// `max(8, width + 1)`: fewer points than that give a rank-deficient
/// covariance by construction.
pub fn default_min_cluster(model: &QuantizationModel) -> usize {
    let w = model.ranges.iter().map(|r| r.len()).max().unwrap_or(0);
    (w + 1).max(8)
}

/// Mean EEE over the `m·k` clusters.
///
/// For product models a cluster is the set of subvectors assigned to a
/// centroid. For additive models it is the set of residual vectors
/// `x − Σ_{l≠j} c_l` of the points whose code in codebook `j` is that
/// centroid.
pub fn cluster_eee(
    model: &QuantizationModel,
    cloud: &PointCloud,
    assignment: &Assignment,
    min_cluster: Option<usize>,
) -> Result<ClusterEee> {
    if cloud.d() != model.d {
        return Err(Error::DimensionMismatch { expected: model.d, found: cloud.d() });
    }
    if assignment.n != cloud.n() || assignment.m != model.m {
        return Err(Error::DimensionMismatch { expected: cloud.n() * model.m, found: assignment.codes.len() });
    }
    let min_cluster = min_cluster.unwrap_or_else(|| default_min_cluster(model)).max(2);
    let (m, k) = (model.m, model.k);
    let sets = model.centroid_sets();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); m * k];
    for i in 0..assignment.n {
        for (j, &c) in assignment.codes_of(i).iter().enumerate() {
            members[j * k + c as usize].push(i);
        }
    }
    let values: Vec<Option<f64>> = members
        .par_iter()
        .enumerate()
        .map(|(g, idx)| {
            if idx.len() < min_cluster {
                return None;
            }
            let j = g / k;
            let range = model.ranges[j].clone();
            let w = range.len();
            let mut rows = Vec::with_capacity(idx.len() * w);
            for &i in idx {
                let x = &cloud.row(i)[range.clone()];
                match model.kind {
                    QuantizerKind::Product => rows.extend(x.iter().map(|&v| v as f64)),
                    QuantizerKind::Additive => {
                        let start = rows.len();
                        rows.extend(x.iter().map(|&v| v as f64));
                        let codes = assignment.codes_of(i);
                        for (l, set) in sets.iter().enumerate().filter(|&(l, _)| l != j) {
                            for (r, v) in rows[start..].iter_mut().zip(set.centroid(codes[l] as usize)) {
                                *r -= v;
                            }
                        }
                    }
                }
            }
            let cov = linalg::covariance_f64(&rows, idx.len(), w);
            let spectrum = EigenSpectrum::from_values(linalg::symmetric_eigenvalues(&cov));
            eee(&spectrum).ok()
        })
        .collect();
    let included: Vec<f64> = values.iter().flatten().copied().collect();
    if included.is_empty() {
        return Err(Error::Undefined(format!("no cluster has ≥ {min_cluster} points and nonzero variance")));
    }
    Ok(ClusterEee {
        value: included.iter().sum::<f64>() / included.len() as f64,
        included: included.len(),
        skipped: values.len() - included.len(),
        min_cluster,
    })
}

/// Every measure this crate reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Pp,
    PcVar,
    PcKl,
    Rs,
    Re,
    Ri,
    CdVar,
    PdEee,
    Eee,
    Vrm,
    IsoScore,
}

impl Measure {
    pub const QUANTIZED: [Measure; 8] = [
        Measure::Pp,
        Measure::PcVar,
        Measure::PcKl,
        Measure::Rs,
        Measure::Re,
        Measure::Ri,
        Measure::CdVar,
        Measure::PdEee,
    ];
    pub const SPREAD: [Measure; 3] = [Measure::Eee, Measure::Vrm, Measure::IsoScore];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Pp => "pp",
            Measure::PcVar => "pcvar",
            Measure::PcKl => "pckl",
            Measure::Rs => "rs",
            Measure::Re => "re",
            Measure::Ri => "ri",
            Measure::CdVar => "cdvar",
            Measure::PdEee => "pdeee",
            Measure::Eee => "eee",
            Measure::Vrm => "vrm",
            Measure::IsoScore => "isoscore",
        }
    }

    pub fn is_spread(self) -> bool {
        Measure::SPREAD.contains(&self)
    }

    pub fn all() -> Vec<Measure> {
        Measure::QUANTIZED.iter().chain(&Measure::SPREAD).copied().collect()
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.trim().to_ascii_lowercase().chars().filter(|c| *c != '_' && *c != '-').collect();
        Measure::all()
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown measure {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Undefined,
    Partial,
}

/// One measure's outcome. Undefined measures carry no value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureValue {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl MeasureValue {
    pub fn ok(value: f64) -> Self {
        MeasureValue { value: Some(value), status: Status::Ok, note: None }
    }

    pub fn partial(value: f64, note: String) -> Self {
        MeasureValue { value: Some(value), status: Status::Partial, note: Some(note) }
    }

    pub fn undefined(why: String) -> Self {
        MeasureValue { value: None, status: Status::Undefined, note: Some(why) }
    }

    /// `Ok` values pass through; undefined-measure and data errors become an
    /// undefined status.
    pub fn from_result(r: Result<f64>) -> Self {
        match r {
            Ok(v) if v.is_finite() => MeasureValue::ok(v),
            Ok(v) => MeasureValue::undefined(format!("non-finite result {v}")),
            Err(e) => MeasureValue::undefined(e.to_string()),
        }
    }
}

/// Summary of one quantizer's training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub train_points: usize,
    /// Iterations actually run per objective history.
    pub iterations: Vec<usize>,
    pub final_objective: Vec<f64>,
    pub fallback_updates: usize,
}

pub const SCHEMA_VERSION: u32 = 1;

/// Named measure results for one cloud, with everything needed to rerun it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub schema_version: u32,
    pub library_version: String,
    pub provenance: String,
    pub measures: BTreeMap<String, MeasureValue>,
    pub config: serde_json::Value,
    pub generator: String,
    pub seeds: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub training: BTreeMap<String, TrainingSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl MeasureReport {
    pub fn new(provenance: impl Into<String>, config: serde_json::Value) -> Self {
        MeasureReport {
            schema_version: SCHEMA_VERSION,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            provenance: provenance.into(),
            measures: BTreeMap::new(),
            config,
            generator: crate::random::GENERATOR.to_string(),
            seeds: BTreeMap::new(),
            training: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.measures.get(name).and_then(|m| m.value)
    }

    pub fn any_undefined(&self) -> bool {
        self.measures.values().any(|m| m.status == Status::Undefined)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}




#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    fn counts() -> impl Strategy<Value = Vec<u64>> {
        prop::collection::vec(0u64..50, 2..40).prop_filter("nonzero", |c| c.iter().any(|&v| v > 0))
    }

    fn sample() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0..10.0f64, 4..60).prop_filter("spread", |v| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() > 1e-3
        })
    }

    proptest! {
        #[test]
        fn count_measures_ignore_cell_order(c in counts(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut shuffled = c.clone();
            shuffled.shuffle(&mut crate::random::rng(seed, 0));
            let (a, b) = (patchiness_of_counts(&c).unwrap(), patchiness_of_counts(&shuffled).unwrap());
            prop_assert!((a - b).abs() < 1e-12 * a.abs());
        }

        #[test]
        fn equal_counts_give_mean_minus_one_over_mean(v in 1u64..1000, cells in 2usize..50) {
            let pp = patchiness_of_counts(&vec![v; cells]).unwrap();
            let m = v as f64;
            prop_assert!((pp - (m - 1.0) / m).abs() < 1e-12);
        }

        #[test]
        fn moving_a_point_to_a_crowded_cell_raises_pp(c in counts(), a in 0usize..40, b in 0usize..40) {
            let (a, b) = (a % c.len(), b % c.len());
            let mean = c.iter().sum::<u64>() as f64 / c.len() as f64;
            prop_assume!((c[a] as f64) < mean && (c[b] as f64) > mean && c[a] > 0);
            let mut moved = c.clone();
            moved[a] -= 1;
            moved[b] += 1;
            prop_assert!(patchiness_of_counts(&moved).unwrap() > patchiness_of_counts(&c).unwrap());
        }

        #[test]
        fn odds_measures_are_permutation_invariant_and_nonnegative(c in counts()) {
            let n: u64 = c.iter().sum();
            prop_assume!(c.iter().all(|&v| v < n));
            let mut rev = c.clone();
            rev.reverse();
            let s = CellStats::from_counts(vec![c.clone()]).unwrap();
            let r = CellStats::from_counts(vec![rev]).unwrap();
            prop_assert!((point_count_var(&s).unwrap() - point_count_var(&r).unwrap()).abs() < 1e-9);
            prop_assert!((point_count_kl(&s).unwrap() - point_count_kl(&r).unwrap()).abs() < 1e-12);
            prop_assert!(point_count_var(&s).unwrap() >= 0.0 && point_count_kl(&s).unwrap() >= -1e-15);
            let twice = CellStats::from_counts(vec![c.clone(), c]).unwrap();
            prop_assert!((point_count_kl(&twice).unwrap() - point_count_kl(&s).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn skew_is_scale_invariant_and_odd(v in sample(), a in 0.01..100.0f64) {
            let s = sample_skew(&v).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| a * x).collect();
            prop_assert!((sample_skew(&scaled).unwrap() - s).abs() < 1e-9 * (1.0 + s.abs()));
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let mirror: Vec<f64> = v.iter().map(|x| 2.0 * mean - x).collect();
            prop_assert!((sample_skew(&mirror).unwrap() + s).abs() < 1e-9 * (1.0 + s.abs()));
        }

        #[test]
        fn iqr_is_translation_invariant(v in sample(), t in -5.0..5.0f64) {
            let shifted: Vec<f64> = v.iter().map(|x| x + t).collect();
            prop_assert!((iqr(&shifted).unwrap() - iqr(&v).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn duplicated_codebooks_keep_cd_var(d in prop::collection::vec(0.1..5.0f64, 2..20)) {
            let k = d.len();
            let mut one = CellStats::from_counts(vec![vec![1; k]]).unwrap();
            one.nn_dist = d.clone();
            let mut two = CellStats::from_counts(vec![vec![1; k], vec![1; k]]).unwrap();
            two.nn_dist = d.iter().chain(&d).copied().collect();
            let (a, b) = (centroid_dist_var(&one).unwrap(), centroid_dist_var(&two).unwrap());
            // pooled sum doubles while the denominator goes from k−1 to 2k−1
            prop_assert!((b - a * 2.0 * (k - 1) as f64 / (2 * k - 1) as f64).abs() < 1e-12);
        }
    }
}
