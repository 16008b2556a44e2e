//! Covariate balance before and after weighting.
//!
//! Unweighted SMDs use the usual pooled SD with `n − 1` divisors. After weighting the
//! per-study variances are `Σw(x − x̄*)²/Σw` and are pooled as `√((s₀*² + s₁*²)/2)`.
//! Both choices are recorded in [`BalanceMetadata`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DesignMatrix;
use crate::matching::{ess, WeightSolution};
use crate::propensity::PropensityWeights;

/// Pooled SDs at or below this (relative to the column scale) count as zero.
const ZERO_SD_TOL: f64 = 1e-12;
const BOX_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BalanceError {
    #[error("weights sum to zero")]
    ZeroWeightSum,
    #[error("negative or non-finite weight {value} at index {index}")]
    InvalidWeight { index: usize, value: f64 },
    #[error("{values} values but {weights} weights")]
    LengthMismatch { values: usize, weights: usize },
    #[error("pooled standard deviation is zero")]
    ZeroPooledSd,
}

fn check(values: &[f64], weights: &[f64]) -> Result<f64, BalanceError> {
    if values.len() != weights.len() {
        return Err(BalanceError::LengthMismatch {
            values: values.len(),
            weights: weights.len(),
        });
    }
    if let Some((index, &value)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !(**w >= 0.0 && w.is_finite()))
    {
        return Err(BalanceError::InvalidWeight { index, value });
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(BalanceError::ZeroWeightSum);
    }
    Ok(total)
}

pub fn weighted_mean(values: &[f64], weights: &[f64]) -> Result<f64, BalanceError> {
    let total = check(values, weights)?;
    Ok(values.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() / total)
}

/// `Σw(x − x̄*)² / Σw`
pub fn weighted_variance(values: &[f64], weights: &[f64]) -> Result<f64, BalanceError> {
    let total = check(values, weights)?;
    let mean = values.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() / total;
    let ss: f64 = values
        .iter()
        .zip(weights)
        .map(|(x, w)| w * (x - mean).powi(2))
        .sum();
    Ok((ss / total).max(0.0))
}

fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

fn scale_of(values: [&[f64]; 2]) -> f64 {
    values
        .iter()
        .flat_map(|v| v.iter())
        .fold(1.0_f64, |m, x| m.max(x.abs()))
}

/// Absolute standardized mean difference of one column.
///
/// With `weights = None` the unweighted pooled SD is used; otherwise the weighted
/// means and variances of each study.
pub fn smd(values: [&[f64]; 2], weights: Option<[&[f64]; 2]>) -> Result<f64, BalanceError> {
    let (m0, m1, sd) = match weights {
        None => {
            let n = [values[0].len() as f64, values[1].len() as f64];
            if n[0] + n[1] <= 2.0 {
                return Err(BalanceError::ZeroPooledSd);
            }
            let pooled = ((n[0] - 1.0).max(0.0) * sample_variance(values[0])
                + (n[1] - 1.0).max(0.0) * sample_variance(values[1]))
                / (n[0] + n[1] - 2.0);
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            (mean(values[0]), mean(values[1]), pooled.sqrt())
        }
        Some(w) => {
            let v0 = weighted_variance(values[0], w[0])?;
            let v1 = weighted_variance(values[1], w[1])?;
            (
                weighted_mean(values[0], w[0])?,
                weighted_mean(values[1], w[1])?,
                ((v0 + v1) / 2.0).sqrt(),
            )
        }
    };
    if sd <= ZERO_SD_TOL * scale_of(values) {
        return Err(BalanceError::ZeroPooledSd);
    }
    Ok((m1 - m0).abs() / sd)
}

/// Rule-of-thumb annotation; never used as a gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmdBand {
    /// below 0.1
    Negligible,
    /// 0.1 to 0.2
    Moderate,
    Large,
}

impl SmdBand {
    pub fn of(smd: f64) -> Self {
        if smd < 0.1 {
            SmdBand::Negligible
        } else if smd < 0.2 {
            SmdBand::Moderate
        } else {
            SmdBand::Large
        }
    }
}

/// One weighting method to be compared in a balance table.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedWeights {
    pub name: String,
    /// `None` for a method that produced no weights (e.g. no exact match exists).
    pub weights: Option<[Vec<f64>; 2]>,
    pub exact: bool,
}

impl NamedWeights {
    pub fn from_match(name: impl Into<String>, s: &WeightSolution) -> Self {
        Self {
            name: name.into(),
            weights: s.is_matched().then(|| s.weights.clone()),
            exact: true,
        }
    }

    pub fn from_propensity(name: impl Into<String>, w: &PropensityWeights) -> Self {
        Self {
            name: name.into(),
            weights: Some(w.weights.clone()),
            exact: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodBalance {
    pub method: String,
    pub weighted_means: Option<[f64; 2]>,
    /// `None` when the pooled SD is zero or the method has no weights.
    pub smd_after: Option<f64>,
    pub band: Option<SmdBand>,
    /// A weighted mean lies outside the range spanned by the two observed means.
    pub outside_observed_range: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub column: String,
    pub observed_means: [f64; 2],
    pub smd_before: Option<f64>,
    pub band_before: Option<SmdBand>,
    pub methods: Vec<MethodBalance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub has_weights: bool,
    pub ess: Option<[f64; 2]>,
    pub max_smd_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceMetadata {
    pub unweighted_pooled_sd: String,
    pub weighted_variance: String,
    pub weighted_pooled_sd: String,
    pub smd_bands: [f64; 2],
}

impl Default for BalanceMetadata {
    fn default() -> Self {
        Self {
            unweighted_pooled_sd: "sqrt(((n0-1)s0^2 + (n1-1)s1^2)/(n0+n1-2))".into(),
            weighted_variance: "sum(w(x-xbar*)^2)/sum(w)".into(),
            weighted_pooled_sd: "sqrt((s0*^2 + s1*^2)/2)".into(),
            smd_bands: [0.1, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub n: [usize; 2],
    pub rows: Vec<BalanceRow>,
    pub methods: Vec<MethodSummary>,
    pub metadata: BalanceMetadata,
}

pub fn balance_table(
    dm: &DesignMatrix,
    methods: &[NamedWeights],
) -> Result<BalanceReport, BalanceError> {
    for m in methods {
        if let Some(w) = &m.weights {
            for k in 0..2 {
                let rows = dm.study(k as u8).rows();
                if w[k].len() != rows {
                    return Err(BalanceError::LengthMismatch {
                        values: rows,
                        weights: w[k].len(),
                    });
                }
            }
        }
    }
    let mut rows = Vec::with_capacity(dm.n_cols());
    for c in 0..dm.n_cols() {
        let cols = [dm.x0.column(c), dm.x1.column(c)];
        let views = [cols[0].as_slice(), cols[1].as_slice()];
        let observed = [0, 1].map(|k| views[k].iter().sum::<f64>() / views[k].len().max(1) as f64);
        let lo = observed[0].min(observed[1]);
        let hi = observed[0].max(observed[1]);
        let tol = BOX_TOL * (1.0 + lo.abs().max(hi.abs()));
        let smd_before = smd(views, None).ok();
        let mut per_method = Vec::with_capacity(methods.len());
        for m in methods {
            let entry = match &m.weights {
                None => MethodBalance {
                    method: m.name.clone(),
                    weighted_means: None,
                    smd_after: None,
                    band: None,
                    outside_observed_range: false,
                },
                Some(w) => {
                    let means = [
                        weighted_mean(views[0], &w[0])?,
                        weighted_mean(views[1], &w[1])?,
                    ];
                    let after = match smd(views, Some([&w[0], &w[1]])) {
                        Ok(v) => Some(v),
                        Err(BalanceError::ZeroPooledSd) => None,
                        Err(e) => return Err(e),
                    };
                    MethodBalance {
                        method: m.name.clone(),
                        weighted_means: Some(means),
                        smd_after: after,
                        band: after.map(SmdBand::of),
                        outside_observed_range: means.iter().any(|&v| v < lo - tol || v > hi + tol),
                    }
                }
            };
            per_method.push(entry);
        }
        rows.push(BalanceRow {
            column: dm.column_names[c].clone(),
            observed_means: observed,
            smd_before,
            band_before: smd_before.map(SmdBand::of),
            methods: per_method,
        });
    }
    let summaries = methods
        .iter()
        .enumerate()
        .map(|(i, m)| MethodSummary {
            method: m.name.clone(),
            has_weights: m.weights.is_some(),
            ess: m
                .weights
                .as_ref()
                .and_then(|w| Some([ess(&w[0]).ok()?, ess(&w[1]).ok()?])),
            max_smd_after: m.weights.as_ref().map(|_| {
                rows.iter()
                    .filter_map(|r: &BalanceRow| r.methods[i].smd_after)
                    .fold(0.0, f64::max)
            }),
        })
        .collect();
    Ok(BalanceReport {
        n: [dm.n0(), dm.n1()],
        rows,
        methods: summaries,
        metadata: BalanceMetadata::default(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_else(|| "NA".into())
}

impl BalanceReport {
    /// Wide CSV: one row per encoded column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("column,mean0,mean1,smd_before");
        for m in &self.methods {
            let n = &m.method;
            write!(out, ",{n}_mean0,{n}_mean1,{n}_smd_after,{n}_outside_range").unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            write!(
                out,
                "{},{},{},{}",
                csv_field(&r.column),
                r.observed_means[0],
                r.observed_means[1],
                fmt_opt(r.smd_before)
            )
            .unwrap();
            for m in &r.methods {
                let [a, b] = m
                    .weighted_means
                    .map_or([None, None], |v| [Some(v[0]), Some(v[1])]);
                write!(
                    out,
                    ",{},{},{},{}",
                    fmt_opt(a),
                    fmt_opt(b),
                    fmt_opt(m.smd_after),
                    m.outside_observed_range
                )
                .unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Per-patient weights of every method, each scaled to sum to its study size, for
/// weight-vs-weight scatter plots and histograms.
pub fn plot_data_csv(n: [usize; 2], methods: &[NamedWeights]) -> String {
    let mut out = String::from("study,index");
    for m in methods {
        write!(out, ",{}", csv_field(&m.name)).unwrap();
    }
    out.push('\n');
    let scaled: Vec<Option<[Vec<f64>; 2]>> = methods
        .iter()
        .map(|m| {
            m.weights
                .as_ref()
                .map(|w| [0, 1].map(|k| crate::matching::scale_to(&w[k], n[k] as f64)))
        })
        .collect();
    for k in 0..2 {
        for i in 0..n[k] {
            write!(out, "{k},{i}").unwrap();
            for s in &scaled {
                write!(out, ",{}", fmt_opt(s.as_ref().map(|w| w[k][i]))).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{encode, Covariate, CovariateSchema, CovariateTable, Value};
    use crate::matching::{match_weights, MatchSpec};
    use approx::assert_abs_diff_eq;

    #[test]
    fn weighted_mean_examples() {
        assert_abs_diff_eq!(weighted_mean(&[0.0, 10.0], &[3.0, 1.0]).unwrap(), 2.5);
        assert_abs_diff_eq!(
            weighted_mean(&[4.0, 7.0, 9.0], &[0.0, 1.0, 0.0]).unwrap(),
            7.0
        );
        assert_abs_diff_eq!(weighted_mean(&[1.0, 2.0, 6.0], &[2.0; 3]).unwrap(), 3.0);
        assert_eq!(
            weighted_mean(&[1.0], &[0.0]),
            Err(BalanceError::ZeroWeightSum)
        );
        assert!(matches!(
            weighted_mean(&[1.0, 2.0], &[1.0, -1.0]),
            Err(BalanceError::InvalidWeight { index: 1, .. })
        ));
    }

    #[test]
    fn weighted_variance_examples() {
        assert_abs_diff_eq!(weighted_variance(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(weighted_variance(&[0.0, 2.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            weighted_variance(&[3.0; 4], &[1.0, 2.0, 3.0, 4.0]).unwrap(),
            0.0
        );
    }

    #[test]
    fn smd_examples() {
        // means 0 and 1, sample SD 1 in each study
        let a = [-1.0, 0.0, 1.0];
        let b = [0.0, 1.0, 2.0];
        assert_abs_diff_eq!(smd([&a, &b], None).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(smd([&a, &a], None).unwrap(), 0.0);
        assert_eq!(
            smd([&[2.0, 2.0], &[2.0, 2.0]], None),
            Err(BalanceError::ZeroPooledSd)
        );
        assert_eq!(
            smd([&[2.0, 2.0], &[2.0, 2.0]], Some([&[1.0, 1.0], &[1.0, 3.0]])),
            Err(BalanceError::ZeroPooledSd)
        );
    }

    #[test]
    fn weighted_smd_uses_average_variance() {
        // study 0 weighted var 1 (values 0, 2), study 1 var 0 → pooled √0.5
        let v = smd([&[0.0, 2.0], &[3.0, 3.0]], Some([&[1.0, 1.0], &[1.0, 1.0]])).unwrap();
        assert_abs_diff_eq!(v, 2.0 / 0.5_f64.sqrt(), epsilon = 1e-12);
    }

    fn toy() -> DesignMatrix {
        let schema = CovariateSchema::new(vec![
            Covariate::continuous("x"),
            Covariate::categorical("c", ["a", "b"]),
        ])
        .unwrap();
        let rows = [
            (0, 0.0, 0),
            (0, 1.0, 1),
            (0, 2.0, 0),
            (0, 3.0, 1),
            (1, 1.0, 0),
            (1, 2.0, 1),
            (1, 2.5, 1),
            (1, 4.0, 0),
        ];
        let study = rows.iter().map(|r| r.0).collect();
        let values = rows
            .iter()
            .map(|r| vec![Value::Number(r.1), Value::Level(r.2)])
            .collect();
        encode(&CovariateTable::new(schema, study, values, None).unwrap())
    }

    #[test]
    fn exact_match_reports_zero_smd() {
        let dm = toy();
        let s = match_weights(&dm, &MatchSpec::unconstrained()).unwrap();
        assert!(s.is_matched());
        let report = balance_table(&dm, &[NamedWeights::from_match("unconstrained", &s)]).unwrap();
        assert_eq!(report.rows.len(), 3);
        for r in &report.rows {
            assert!(r.methods[0].smd_after.unwrap() <= 1e-8);
        }
        assert!(report.methods[0].max_smd_after.unwrap() <= 1e-8);
        let csv = report.to_csv();
        assert!(csv.starts_with("column,mean0,mean1,smd_before,unconstrained_mean0"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn identical_studies_have_zero_before_smd() {
        let m = crate::numerics::Matrix::from_rows(&[vec![1.0], vec![2.0], vec![5.0]]).unwrap();
        let dm = DesignMatrix {
            x0: m.clone(),
            x1: m,
            column_names: vec!["x".into()],
            column_origin: vec![crate::data::ColumnOrigin {
                covariate: 0,
                level: None,
            }],
            rows: [vec![0, 1, 2], vec![3, 4, 5]],
        };
        let w = NamedWeights {
            name: "any".into(),
            weights: Some([vec![1.0, 2.0, 3.0], vec![3.0, 1.0, 1.0]]),
            exact: false,
        };
        let r = balance_table(&dm, &[w]).unwrap();
        assert_eq!(r.rows[0].smd_before, Some(0.0));
    }

    #[test]
    fn pooled_mean_outside_observed_range_is_flagged() {
        let dm = toy();
        // all weight on the largest x in each study: 3 and 4 lie above both observed means
        let w = NamedWeights {
            name: "corner".into(),
            weights: Some([vec![0.0, 0.0, 0.0, 1.0], vec![0.0, 0.0, 0.0, 1.0]]),
            exact: false,
        };
        let r = balance_table(&dm, &[w]).unwrap();
        assert!(r.rows[0].methods[0].outside_observed_range);
    }

    #[test]
    fn missing_weights_render_as_na() {
        let dm = toy();
        let w = NamedWeights {
            name: "none".into(),
            weights: None,
            exact: true,
        };
        let r = balance_table(&dm, std::slice::from_ref(&w)).unwrap();
        assert!(r
            .to_csv()
            .lines()
            .nth(1)
            .unwrap()
            .ends_with("NA,NA,NA,false"));
        let plot = plot_data_csv(r.n, &[w]);
        assert_eq!(plot.lines().count(), 9);
    }

    #[test]
    fn bands() {
        assert_eq!(SmdBand::of(0.05), SmdBand::Negligible);
        assert_eq!(SmdBand::of(0.15), SmdBand::Moderate);
        assert_eq!(SmdBand::of(0.2), SmdBand::Large);
    }
}
