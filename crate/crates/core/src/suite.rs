//! One-call measurement of a cloud: train the configured quantizers, derive
//! every requested measure and collect the results in a [`MeasureReport`].

use serde::{Deserialize, Serialize};

use crate::pointcloud::PointCloud;
use crate::qmeasures::{self, Measure, MeasureReport, MeasureValue, TrainingSummary};
use crate::quantizer::{
    encode_and_stats, train_additive, train_product, AdditiveConfig, ProductConfig, QuantizationModel,
    QuantizerKind, TrainingLog,
};
use crate::spread;
use crate::{Error, Result};

/// A quantizer to train before measuring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum QuantizerConfig {
    Pq(ProductConfig),
    Aq(AdditiveConfig),
}

impl QuantizerConfig {
    pub fn kind(&self) -> QuantizerKind {
        match self {
            QuantizerConfig::Pq(_) => QuantizerKind::Product,
            QuantizerConfig::Aq(_) => QuantizerKind::Additive,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            QuantizerConfig::Pq(c) => c.seed,
            QuantizerConfig::Aq(c) => c.seed,
        }
    }

    pub fn train(&self, cloud: &PointCloud) -> Result<(QuantizationModel, TrainingLog)> {
        match self {
            QuantizerConfig::Pq(c) => train_product(cloud, c),
            QuantizerConfig::Aq(c) => train_additive(cloud, c),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub quantizers: Vec<QuantizerConfig>,
    pub measures: Vec<Measure>,
    pub vrm_window: Option<usize>,
    /// Smallest cluster kept by PD_EEE; `None` uses `max(8, width + 1)`.
    pub min_cluster: Option<usize>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            quantizers: vec![
                QuantizerConfig::Pq(ProductConfig::default()),
                QuantizerConfig::Aq(AdditiveConfig::default()),
            ],
            measures: Measure::all(),
            vrm_window: None,
            min_cluster: None,
        }
    }
}

const NOTE_CENTERING: &str = "eee, isoscore: computed on the mean-centered covariance (denominator n-1)";
const NOTE_EEE: &str =
    "eee: discrete sum over i=1..d of cumulative eigenvalues minus i*v/d, over d*v/2; eigenvalues below 1e-12 of the largest are zeroed";
const NOTE_PP: &str = "pp: all m*k cell counts pooled; sample variance with denominator mk-1; no cell-volume weighting";
const NOTE_PCKL: &str = "pckl: per codebook, odds ratios normalized to sum 1 and compared to uniform 1/k by KL in nats";
const NOTE_ADDITIVE: &str =
    "additive cdvar/pdeee: clusters of codebook j are residuals x - sum over l != j of the chosen centroids, grouped by the code in j";

/// Report key for a measure: prefixed by the quantizer when several are run.
fn key(prefix: Option<&str>, m: Measure) -> String {
    match prefix {
        Some(p) if !m.is_spread() => format!("{p}.{}", m.name()),
        _ => m.name().to_string(),
    }
}

/// Train every configured quantizer on `cloud` and report the requested
/// measures. Measure-level failures become `undefined` entries; invalid
/// configuration is an error.
pub fn run_suite(cloud: &PointCloud, cfg: &SuiteConfig) -> Result<MeasureReport> {
    let config = serde_json::to_value(cfg).expect("config serializes");
    let mut report = MeasureReport::new(cloud.label(), config);
    let wants_quantized = cfg.measures.iter().any(|m| !m.is_spread());
    if wants_quantized && cfg.quantizers.is_empty() {
        return Err(Error::Config("quantization measures requested without a quantizer".into()));
    }
    let mut kinds: Vec<&str> = cfg.quantizers.iter().map(|q| q.kind().short()).collect();
    kinds.sort_unstable();
    kinds.dedup();
    if kinds.len() != cfg.quantizers.len() {
        return Err(Error::Config("at most one quantizer of each kind".into()));
    }
    if let Some(w) = cfg.vrm_window.filter(|_| cfg.measures.contains(&Measure::Vrm)) {
        if w == 0 || 2 * w >= cloud.n() {
            return Err(Error::Config(format!("VRM window {w} must be positive and below n/2")));
        }
    }
    let prefixed = cfg.quantizers.len() > 1;
    if wants_quantized {
        for q in &cfg.quantizers {
            let name = q.kind().short();
            let (model, log) = q.train(cloud)?;
            report.seeds.insert(format!("{name}.seed"), q.seed());
            report.training.insert(name.to_string(), summarize(&log));
            let prefix = prefixed.then_some(name);
            measure_model(&mut report, prefix, &model, cloud, &cfg.measures, cfg.min_cluster)?;
        }
    }
    measure_spread(&mut report, cloud, &cfg.measures, cfg.vrm_window)?;
    Ok(report)
}

pub fn summarize(log: &TrainingLog) -> TrainingSummary {
    TrainingSummary {
        train_points: log.train_points,
        iterations: log.objective_history.iter().map(|h| h.len().saturating_sub(1)).collect(),
        final_objective: log.objective_history.iter().filter_map(|h| h.last().copied()).collect(),
        fallback_updates: log.fallback_updates,
    }
}

/// Add the requested quantization measures of `model` on `cloud`.
pub fn measure_model(
    report: &mut MeasureReport,
    prefix: Option<&str>,
    model: &QuantizationModel,
    cloud: &PointCloud,
    measures: &[Measure],
    min_cluster: Option<usize>,
) -> Result<()> {
    let wanted: Vec<Measure> = Measure::QUANTIZED.iter().copied().filter(|m| measures.contains(m)).collect();
    if wanted.is_empty() {
        return Ok(());
    }
    let (assignment, stats) = encode_and_stats(model, cloud)?;
    for m in wanted {
        let value = match m {
            Measure::Pp => MeasureValue::from_result(qmeasures::point_patchiness(&stats)),
            Measure::PcVar => MeasureValue::from_result(qmeasures::point_count_var(&stats)),
            Measure::PcKl => MeasureValue::from_result(qmeasures::point_count_kl(&stats)),
            Measure::Rs => MeasureValue::from_result(qmeasures::reconstruction_skew(&stats)),
            Measure::Re => MeasureValue::from_result(qmeasures::reconstruction_error(cloud, &assignment)),
            Measure::Ri => MeasureValue::from_result(qmeasures::reconstruction_iqr(&stats)),
            Measure::CdVar => MeasureValue::from_result(qmeasures::centroid_dist_var(&stats)),
            Measure::PdEee => match qmeasures::cluster_eee(model, cloud, &assignment, min_cluster) {
                Ok(c) if c.skipped == 0 => MeasureValue::ok(c.value),
                Ok(c) => MeasureValue::partial(
                    c.value,
                    format!(
                        "{} of {} clusters skipped (fewer than {} points or zero variance)",
                        c.skipped,
                        c.skipped + c.included,
                        c.min_cluster
                    ),
                ),
                Err(e @ Error::DimensionMismatch { .. }) => return Err(e),
                Err(e) => MeasureValue::undefined(e.to_string()),
            },
            _ => unreachable!("spread measures are handled separately"),
        };
        report.measures.insert(key(prefix, m), value);
    }
    push_note(report, NOTE_PP, measures.contains(&Measure::Pp));
    push_note(report, NOTE_PCKL, measures.contains(&Measure::PcKl));
    let shapes = measures.contains(&Measure::CdVar) || measures.contains(&Measure::PdEee);
    push_note(report, NOTE_ADDITIVE, shapes && model.kind == QuantizerKind::Additive);
    Ok(())
}

/// Add the requested whole-cloud spread measures.
pub fn measure_spread(
    report: &mut MeasureReport,
    cloud: &PointCloud,
    measures: &[Measure],
    vrm_window: Option<usize>,
) -> Result<()> {
    if !measures.iter().any(|m| m.is_spread()) {
        return Ok(());
    }
    let s = spread::spread_measures(cloud, vrm_window);
    if measures.contains(&Measure::Eee) {
        report.measures.insert(Measure::Eee.name().into(), MeasureValue::from_result(s.eee));
        push_note(report, NOTE_EEE, true);
    }
    if measures.contains(&Measure::Vrm) {
        let value = match s.vrm {
            Ok(v) if v.excluded_dims == 0 => MeasureValue::ok(v.value),
            Ok(v) => MeasureValue::partial(
                v.value,
                format!("{} dimension(s) excluded: ratio undefined", v.excluded_dims),
            ),
            Err(e @ Error::Config(_)) => return Err(e),
            Err(e) => MeasureValue::undefined(e.to_string()),
        };
        report.measures.insert(Measure::Vrm.name().into(), value);
        let window = vrm_window.unwrap_or_else(|| spread::default_vrm_window(cloud.n()));
        push_note(report, &format!("vrm: Vasicek window {window}, clamped endpoints"), true);
    }
    if measures.contains(&Measure::IsoScore) {
        report.measures.insert(Measure::IsoScore.name().into(), MeasureValue::from_result(s.isoscore));
    }
    push_note(report, NOTE_CENTERING, measures.contains(&Measure::Eee) || measures.contains(&Measure::IsoScore));
    Ok(())
}

fn push_note(report: &mut MeasureReport, note: &str, when: bool) {
    if when && !report.notes.iter().any(|n| n == note) {
        report.notes.push(note.to_string());
    }
}
