//! Correlation and ordinary least squares from measures (plus an optional
//! architecture covariate) to an external score.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub model_id: String,
    pub architecture: String,
    /// `None` marks a missing measure.
    pub measures: BTreeMap<String, Option<f64>>,
    pub target: f64,
    /// Replicate group for median aggregation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl Observation {
    pub fn measure(&self, name: &str) -> Option<f64> {
        self.measures.get(name).copied().flatten()
    }

    pub fn missing(&self) -> Vec<&str> {
        self.measures.iter().filter(|(_, v)| v.is_none()).map(|(k, _)| k.as_str()).collect()
    }
}

/// Rows with unique `model_id`s and finite targets in `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationTable {
    rows: Vec<Observation>,
}

const RESERVED: [&str; 4] = ["model_id", "architecture", "target", "group"];

impl ObservationTable {
    pub fn new(rows: Vec<Observation>) -> Result<Self> {
        let mut ids = HashSet::new();
        for r in &rows {
            if !ids.insert(r.model_id.as_str()) {
                return Err(Error::Data(format!("duplicate model_id {:?}", r.model_id)));
            }
            if !(0.0..=1.0).contains(&r.target) {
                return Err(Error::Data(format!("target {} of {:?} is outside [0, 1]", r.target, r.model_id)));
            }
            if let Some((k, v)) = r.measures.iter().find(|(_, v)| v.is_some_and(|x| !x.is_finite())) {
                return Err(Error::Data(format!("measure {k} of {:?} is {:?}", r.model_id, v)));
            }
        }
        Ok(ObservationTable { rows })
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Header `model_id,architecture,target[,group],<measure>...`; empty or
    /// `NA` cells are missing measures.
    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_error)?;
        let header: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(str::to_owned).collect();
        let col = |name: &str| header.iter().position(|h| h == name);
        let (Some(id), Some(arch), Some(target)) = (col("model_id"), col("architecture"), col("target")) else {
            return Err(Error::Parse {
                location: "line 1".into(),
                message: "header needs model_id, architecture and target columns".into(),
            });
        };
        let group = col("group");
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_error)?;
            let line = i + 2;
            let number = |c: usize| -> Result<Option<f64>> {
                let cell = rec.get(c).unwrap_or("");
                if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
                    return Ok(None);
                }
                cell.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                    location: format!("line {line}, column {}", c + 1),
                    message: format!("{:?} is not a number", cell),
                })
            };
            let target = number(target)?.ok_or_else(|| Error::Parse {
                location: format!("line {line}"),
                message: "missing target".into(),
            })?;
            let mut measures = BTreeMap::new();
            for (c, name) in header.iter().enumerate() {
                if !RESERVED.contains(&name.as_str()) {
                    measures.insert(name.clone(), number(c)?);
                }
            }
            rows.push(Observation {
                model_id: rec.get(id).unwrap_or("").to_owned(),
                architecture: rec.get(arch).unwrap_or("").to_owned(),
                measures,
                target,
                group: group.and_then(|g| rec.get(g)).filter(|s| !s.is_empty()).map(str::to_owned),
            });
        }
        ObservationTable::new(rows)
    }

    /// Collapse rows sharing a `group` into one row holding the medians of
    /// target and each measure. Ungrouped rows pass through. Groups take the
    /// place of their first row.
    pub fn median_by_group(&self) -> Result<Self> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<String, Vec<&Observation>> = BTreeMap::new();
        for r in &self.rows {
            let key = r.group.clone().map(|g| format!("g:{g}")).unwrap_or_else(|| format!("r:{}", r.model_id));
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push(r);
        }
        let mut rows = Vec::with_capacity(order.len());
        for key in order {
            let members = &groups[&key];
            let first = members[0];
            if members.len() == 1 {
                rows.push(first.clone());
                continue;
            }
            if let Some(other) = members.iter().find(|r| r.architecture != first.architecture) {
                return Err(Error::Data(format!(
                    "group {:?} mixes architectures {:?} and {:?}",
                    first.group, first.architecture, other.architecture
                )));
            }
            let names: BTreeSet<&String> = members.iter().flat_map(|r| r.measures.keys()).collect();
            let measures = names
                .into_iter()
                .map(|name| {
                    let v: Vec<f64> = members.iter().filter_map(|r| r.measure(name)).collect();
                    (name.clone(), median(&v))
                })
                .collect();
            let targets: Vec<f64> = members.iter().map(|r| r.target).collect();
            rows.push(Observation {
                model_id: first.group.clone().expect("grouped rows have a group"),
                architecture: first.architecture.clone(),
                measures,
                target: median(&targets).expect("group is nonempty"),
                group: first.group.clone(),
            });
        }
        ObservationTable::new(rows)
    }
}

fn csv_error(e: csv::Error) -> Error {
    let location = e
        .position()
        .map(|p| format!("line {}, byte {}", p.line(), p.byte()))
        .unwrap_or_else(|| "unknown".into());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse { location, message: format!("{kind:?}") },
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[h] } else { 0.5 * (v[h - 1] + v[h]) })
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData(format!("correlation needs at least 3 pairs, got {}", x.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation with a constant variable".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub features: Vec<String>,
    pub use_architecture: bool,
    /// Architecture levels in order of first appearance; the first is the
    /// baseline absorbed by the intercept.
    pub levels: Vec<String>,
    /// Design columns in order: `intercept`, features, `arch:<level>`.
    pub columns: Vec<String>,
    pub coefficients: BTreeMap<String, f64>,
    pub r_squared: f64,
    pub model_ids: Vec<String>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Rows left out for a missing feature.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded_rows: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout_mse: Option<f64>,
}

impl RegressionFit {
    pub fn coefficient(&self, name: &str) -> f64 {
        self.coefficients.get(name).copied().unwrap_or(0.0)
    }

    fn predict_row(&self, row: &Observation) -> Result<f64> {
        let mut y = self.coefficient("intercept");
        for f in &self.features {
            let x = row
                .measure(f)
                .ok_or_else(|| Error::Data(format!("row {:?} lacks feature {f}", row.model_id)))?;
            y += self.coefficient(f) * x;
        }
        if self.use_architecture {
            y += self.coefficient(&arch_column(&row.architecture));
        }
        Ok(y)
    }

    /// Fit predictions for every row of `table`.
    pub fn predict(&self, table: &ObservationTable) -> Result<Vec<f64>> {
        self.check_levels(table)?;
        table.rows().iter().map(|r| self.predict_row(r)).collect()
    }

    fn check_levels(&self, table: &ObservationTable) -> Result<()> {
        if !self.use_architecture {
            return Ok(());
        }
        let unseen: BTreeSet<&str> = table
            .rows()
            .iter()
            .map(|r| r.architecture.as_str())
            .filter(|a| !self.levels.iter().any(|l| l == a))
            .collect();
        if unseen.is_empty() {
            Ok(())
        } else {
            Err(Error::UnseenLevel { levels: unseen.into_iter().map(str::to_owned).collect() })
        }
    }
}

fn arch_column(level: &str) -> String {
    format!("arch:{level}")
}

/// Relative size below which a design column counts as collinear with the
/// columns before it.
const RANK_TOL: f64 = 1e-10;

/// Ordinary least squares via Householder QR.
pub fn fit_linear(table: &ObservationTable, features: &[String], use_architecture: bool) -> Result<RegressionFit> {
    let (rows, excluded_rows): (Vec<&Observation>, Vec<&Observation>) =
        table.rows().iter().partition(|r| features.iter().all(|f| r.measure(f).is_some()));
    let mut levels: Vec<String> = Vec::new();
    for r in &rows {
        if !levels.contains(&r.architecture) {
            levels.push(r.architecture.clone());
        }
    }
    let mut columns = vec!["intercept".to_string()];
    columns.extend(features.iter().cloned());
    if use_architecture {
        columns.extend(levels.iter().skip(1).map(|l| arch_column(l)));
    }
    let (n, p) = (rows.len(), columns.len());
    if n <= p {
        return Err(Error::InsufficientData(format!("{n} complete rows for {p} design columns; need more rows than columns")));
    }
    let x = DMatrix::from_fn(n, p, |i, j| {
        let r = rows[i];
        if j == 0 {
            1.0
        } else if j <= features.len() {
            r.measure(&features[j - 1]).expect("complete row")
        } else {
            f64::from(u8::from(r.architecture == levels[j - features.len()]))
        }
    });
    let y = DVector::from_iterator(n, rows.iter().map(|r| r.target));

    let qr = x.clone().qr();
    let rmat = qr.r();
    let collinear: Vec<String> = (0..p)
        .filter(|&j| rmat[(j, j)].abs() <= RANK_TOL * x.column(j).norm().max(f64::MIN_POSITIVE))
        .map(|j| columns[j].clone())
        .collect();
    if !collinear.is_empty() {
        return Err(Error::RankDeficient { columns: collinear });
    }
    let qty = qr.q().transpose() * &y;
    let beta = rmat.solve_upper_triangular(&qty).expect("nonsingular R");

    let fitted = &x * &beta;
    let residuals = &y - &fitted;
    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let sse = residuals.norm_squared();
    let r_squared = if sst > 0.0 { (1.0 - sse / sst).clamp(0.0, 1.0) } else { 0.0 };

    Ok(RegressionFit {
        features: features.to_vec(),
        use_architecture,
        levels,
        coefficients: columns.iter().cloned().zip(beta.iter().copied()).collect(),
        columns,
        r_squared,
        model_ids: rows.iter().map(|r| r.model_id.clone()).collect(),
        fitted: fitted.iter().copied().collect(),
        residuals: residuals.iter().copied().collect(),
        excluded_rows: excluded_rows.iter().map(|r| r.model_id.clone()).collect(),
        holdout_mse: None,
    })
}

/// Mean squared prediction error over `holdout`.
pub fn evaluate(fit: &RegressionFit, holdout: &ObservationTable) -> Result<f64> {
    if holdout.is_empty() {
        return Err(Error::InsufficientData("empty holdout".into()));
    }
    let pred = fit.predict(holdout)?;
    let sse: f64 = pred.iter().zip(holdout.rows()).map(|(p, r)| (p - r.target).powi(2)).sum();
    Ok(sse / holdout.len() as f64)
}

/// CSV `model_id,fitted,residual`.
pub fn write_residuals_csv(path: &Path, fit: &RegressionFit) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["model_id", "fitted", "residual"]).map_err(csv_error)?;
    for ((id, f), r) in fit.model_ids.iter().zip(&fit.fitted).zip(&fit.residuals) {
        w.write_record([id.clone(), f.to_string(), r.to_string()]).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(id: &str, arch: &str, pp: f64, target: f64) -> Observation {
        Observation {
            model_id: id.into(),
            architecture: arch.into(),
            measures: [("pp".to_string(), Some(pp))].into(),
            target,
            group: None,
        }
    }

    fn feats(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn pearson_hand_values() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::Undefined(_))));
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn noiseless_recovery() {
        let rows = (0..8).map(|i| {
            let pp = 0.02 * i as f64;
            row(&format!("m{i}"), "a", pp, 3.0 * pp + 0.1)
        });
        let t = ObservationTable::new(rows.collect()).unwrap();
        let fit = fit_linear(&t, &feats(&["pp"]), false).unwrap();
        assert!((fit.coefficient("pp") - 3.0).abs() < 1e-9);
        assert!((fit.coefficient("intercept") - 0.1).abs() < 1e-9);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(evaluate(&fit, &t).unwrap() < 1e-20);
    }

    /// Closed-form OLS for y = a + b·x + c·z with z a 0/1 indicator, by
    /// solving the 3×3 normal equations with Cramer's rule.
    fn cramer_fit(x: &[f64], z: &[f64], y: &[f64]) -> [f64; 3] {
        let cols = [vec![1.0; x.len()], x.to_vec(), z.to_vec()];
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let a: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| dot(&cols[i], &cols[j])).collect()).collect();
        let b: Vec<f64> = (0..3).map(|i| dot(&cols[i], y)).collect();
        let det = |m: &[Vec<f64>]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(&a);
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            let mut m = a.clone();
            for i in 0..3 {
                m[i][k] = b[i];
            }
            *o = det(&m) / d;
        }
        out
    }

    #[test]
    fn planted_architecture_offsets() {
        let mut rows = Vec::new();
        for i in 0..12 {
            let pp = 0.05 * i as f64;
            let (arch, off) = if i % 3 == 0 { ("base", 0.2) } else { ("small", 0.0) };
            let arch = if i == 1 { "small" } else { arch };
            rows.push(row(&format!("m{i}"), arch, pp, 0.5 * pp + 0.1 + off));
        }
        let t = ObservationTable::new(rows).unwrap();
        let fit = fit_linear(&t, &feats(&["pp"]), true).unwrap();
        assert_eq!(fit.levels, ["base", "small"]);
        assert!((fit.coefficient("pp") - 0.5).abs() < 1e-9);
        assert!((fit.coefficient("intercept") - 0.3).abs() < 1e-9);
        assert!((fit.coefficient("arch:small") + 0.2).abs() < 1e-9);

        let plain = fit_linear(&t, &feats(&["pp"]), false).unwrap();
        let x: Vec<f64> = t.rows().iter().map(|r| r.measure("pp").unwrap()).collect();
        let y: Vec<f64> = t.rows().iter().map(|r| r.target).collect();
        let z: Vec<f64> = t.rows().iter().map(|r| f64::from(u8::from(r.architecture == "small"))).collect();
        let oracle = cramer_fit(&x, &z, &y);
        assert!((fit.coefficient("intercept") - oracle[0]).abs() < 1e-9);
        assert!((fit.coefficient("pp") - oracle[1]).abs() < 1e-9);
        assert!((fit.coefficient("arch:small") - oracle[2]).abs() < 1e-9);
        assert!((plain.coefficient("pp") - 0.5).abs() > 1e-3, "omitting the covariate biases the slope");
    }

    #[test]
    fn constant_target_has_zero_slope_and_r2() {
        let t = ObservationTable::new((0..6).map(|i| row(&format!("m{i}"), "a", i as f64, 0.4)).collect()).unwrap();
        let fit = fit_linear(&t, &feats(&["pp"]), false).unwrap();
        assert!(fit.coefficient("pp").abs() < 1e-12);
        assert_eq!(fit.r_squared, 0.0);
    }

    #[test]
    fn collinear_columns_are_named() {
        let rows: Vec<Observation> = (0..6)
            .map(|i| {
                let mut r = row(&format!("m{i}"), "a", i as f64, 0.1);
                r.measures.insert("twice".into(), Some(2.0 * i as f64));
                r.measures.insert("flat".into(), Some(3.0));
                r
            })
            .collect();
        let t = ObservationTable::new(rows).unwrap();
        match fit_linear(&t, &feats(&["pp", "twice", "flat"]), false) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, ["twice", "flat"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn holdout_mse_and_unseen_levels() {
        let t = ObservationTable::new((0..6).map(|i| row(&format!("m{i}"), "a", i as f64, 0.1 * i as f64)).collect())
            .unwrap();
        let fit = fit_linear(&t, &feats(&["pp"]), true).unwrap();
        let one = ObservationTable::new(vec![row("h", "a", 2.0, 0.3)]).unwrap();
        assert!((evaluate(&fit, &one).unwrap() - 0.01).abs() < 1e-12);
        let hold = ObservationTable::new(vec![row("h1", "z", 1.0, 0.1), row("h2", "y", 1.0, 0.1)]).unwrap();
        match evaluate(&fit, &hold) {
            Err(Error::UnseenLevel { levels }) => assert_eq!(levels, ["y", "z"]),
            other => panic!("{other:?}"),
        }
        // errors of (+0.1, −0.2, 0) from the exact line y = 0.1·pp
        let noisy = ObservationTable::new(vec![row("a", "a", 1.0, 0.2), row("b", "a", 3.0, 0.1), row("c", "a", 5.0, 0.5)])
            .unwrap();
        assert!((evaluate(&fit, &noisy).unwrap() - 0.05 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn table_invariants() {
        assert!(ObservationTable::new(vec![row("a", "x", 1.0, 0.1), row("a", "x", 1.0, 0.1)]).is_err());
        assert!(ObservationTable::new(vec![row("a", "x", 1.0, 1.5)]).is_err());
    }

    #[test]
    fn csv_round_trip_with_missing_and_groups() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("obs.csv");
        std::fs::write(
            &p,
            "model_id,architecture,target,group,pp,rs\n\
             s1,small,0.5,g,1.0,0.1\n\
             s2,small,0.7,g,3.0,NA\n\
             s3,small,0.9,g,2.0,0.3\n\
             b1,base,0.8,,1.5,\n",
        )
        .unwrap();
        let t = ObservationTable::read_csv(&p).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t.rows()[1].missing(), ["rs"]);
        assert_eq!(t.rows()[3].group, None);
        let m = t.median_by_group().unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.rows()[0].model_id, "g");
        assert_eq!(m.rows()[0].target, 0.7);
        assert_eq!(m.rows()[0].measure("pp"), Some(2.0));
        assert_eq!(m.rows()[0].measure("rs"), Some(0.2));

        std::fs::write(&p, "model_id,architecture,target,pp\nx,a,0.1,abc\n").unwrap();
        let err = ObservationTable::read_csv(&p).unwrap_err();
        assert!(matches!(err, Error::Parse { ref location, .. } if location.contains("line 2")), "{err}");
        assert!(matches!(ObservationTable::read_csv(&dir.path().join("none.csv")), Err(Error::NotFound(_))));
    }

    fn sample() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (5usize..30).prop_flat_map(|n| (prop::collection::vec(-10.0..10.0f64, n), prop::collection::vec(0.0..1.0f64, n)))
    }

    fn spread_enough(v: &[f64]) -> bool {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() > 1e-6
    }

    proptest! {
        #[test]
        fn pearson_affine_invariance((x, y) in sample(), a in 0.1..5.0f64, b in -3.0..3.0f64) {
            prop_assume!(spread_enough(&x) && spread_enough(&y));
            let r = pearson(&x, &y).unwrap();
            let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            prop_assert!((pearson(&xs, &y).unwrap() - r).abs() < 1e-9);
            let flipped: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((pearson(&flipped, &y).unwrap() + r).abs() < 1e-9);
        }

        #[test]
        fn residuals_orthogonal_and_r2_is_squared_correlation((x, y) in sample(), split in 1usize..4) {
            prop_assume!(spread_enough(&x) && spread_enough(&y));
            let rows = x.iter().zip(&y).enumerate().map(|(i, (&pp, &t))| {
                row(&format!("m{i}"), if i % (split + 1) == 0 { "a" } else { "b" }, pp, t)
            });
            let t = ObservationTable::new(rows.collect()).unwrap();
            let fit = fit_linear(&t, &feats(&["pp"]), false).unwrap();
            let res = &fit.residuals;
            prop_assert!(res.iter().sum::<f64>().abs() < 1e-9);
            let rn = res.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dot: f64 = res.iter().zip(&x).map(|(r, v)| r * v).sum();
            prop_assert!((dot / (rn * xn)).abs() < 1e-8);
            let r = pearson(&fit.fitted, &y).unwrap();
            prop_assert!((fit.r_squared - r * r).abs() < 1e-9);

            let with_arch = fit_linear(&t, &feats(&["pp"]), true);
            if let Ok(f) = with_arch {
                let z: Vec<f64> = t.rows().iter().map(|r| f64::from(u8::from(r.architecture == "b"))).collect();
                let dz: f64 = f.residuals.iter().zip(&z).map(|(r, v)| r * v).sum();
                let rn = f.residuals.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                prop_assert!((dz / (rn * z.iter().sum::<f64>().sqrt().max(1.0))).abs() < 1e-8);
                prop_assert!((0.0..=1.0).contains(&f.r_squared));
            }
        }
    }
}
