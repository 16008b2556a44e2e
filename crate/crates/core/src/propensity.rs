//! Propensity scores from a logistic model of study membership and the
//! pooled-population weights derived from them.
//!
//! For a pool made of fractions `ν₀`, `ν₁` of the two studies, a patient with fitted
//! score `p̂` gets the unnormalized weight `(p̂ν₁ + (1−p̂)ν₀)/(1−p̂)` in study 0 and
//! `(p̂ν₁ + (1−p̂)ν₀)/p̂` in study 1. With `ν₀ = ν₁ = ½` these are proportional to the
//! classical inverse-probability weights `1/(1−p̂)` and `1/p̂`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CovariateKind, CovariateTable, DesignMatrix, Value};
use crate::matching::{ess, scale_to};
use crate::numerics::{self, Matrix};

pub const SCORE_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100;
/// |linear predictor| beyond which a fit is flagged as separated.
pub const SEPARATION_ETA: f64 = 15.0;
/// Scores are evaluated with the linear predictor clipped to this range so they stay in (0, 1).
const ETA_CLIP: f64 = 35.0;
const EXTREME_P: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropensityError {
    #[error("design is rank deficient; collinear columns: {columns:?}")]
    RankDeficientDesign { columns: Vec<String> },
    #[error("study {0} has no patients")]
    EmptyStudy(u8),
    #[error("invalid ν: ν₀ = {nu0}, ν₁ = {nu1} (need ν₀ + ν₁ = 1, both ≥ 0)")]
    InvalidNu { nu0: f64, nu1: f64 },
    #[error("truncation quantile must lie in (0, 1], got {0}")]
    InvalidQuantile(f64),
    #[error("covariate `{0}` is continuous; the saturated model needs categorical covariates")]
    NotCategorical(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub coefficient_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_abs_linear_predictor: f64,
    /// Max |score equation| at the final iterate.
    pub score_residual: f64,
    pub separation: bool,
    /// Fitted `P(study 1 | x)` per patient, study-0 patients first.
    pub fitted: Vec<f64>,
    pub n: [usize; 2],
}

impl LogisticModel {
    pub fn fitted_by_study(&self) -> [Vec<f64>; 2] {
        [
            self.fitted[..self.n[0]].to_vec(),
            self.fitted[self.n[0]..].to_vec(),
        ]
    }
}

/// Full-rank estimation design: intercept plus every encoded column except the first
/// level of each categorical. Rows are study 0 then study 1.
pub fn estimation_design(dm: &DesignMatrix) -> (Matrix, Vec<f64>, Vec<String>) {
    let keep: Vec<usize> = (0..dm.n_cols())
        .filter(|&c| dm.column_origin[c].level != Some(0))
        .collect();
    let n = dm.n0() + dm.n1();
    let p = keep.len() + 1;
    let mut x = Matrix::zeros(n, p);
    let mut z = Vec::with_capacity(n);
    for (k, m) in [&dm.x0, &dm.x1].into_iter().enumerate() {
        let offset = if k == 0 { 0 } else { dm.n0() };
        for r in 0..m.rows() {
            let row = x.row_mut(offset + r);
            row[0] = 1.0;
            for (j, &c) in keep.iter().enumerate() {
                row[j + 1] = m.get(r, c);
            }
            z.push(k as f64);
        }
    }
    let mut names = vec!["(intercept)".to_string()];
    names.extend(keep.iter().map(|&c| dm.column_names[c].clone()));
    (x, z, names)
}

/// Fits the propensity model on the full-rank estimation design of `dm`.
pub fn fit_logistic(dm: &DesignMatrix) -> Result<LogisticModel, PropensityError> {
    if dm.n0() == 0 {
        return Err(PropensityError::EmptyStudy(0));
    }
    if dm.n1() == 0 {
        return Err(PropensityError::EmptyStudy(1));
    }
    let (x, z, names) = estimation_design(dm);
    let mut model = fit_logistic_design(&x, &z, &names)?;
    model.n = [dm.n0(), dm.n1()];
    Ok(model)
}

fn sigmoid(eta: f64) -> f64 {
    let e = eta.clamp(-ETA_CLIP, ETA_CLIP);
    1.0 / (1.0 + (-e).exp())
}

fn deviance(eta: &[f64], z: &[f64]) -> f64 {
    // −2 log-likelihood, stable for large |η|
    eta.iter()
        .zip(z)
        .map(|(&e, &y)| {
            let log1pexp = if e > 0.0 {
                e + (-e).exp().ln_1p()
            } else {
                e.exp().ln_1p()
            };
            2.0 * (log1pexp - y * e)
        })
        .sum()
}

/// Columns that are linear combinations of earlier ones (greedy Gram–Schmidt).
fn collinear_columns(x: &Matrix, names: &[String]) -> Vec<String> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut bad = Vec::new();
    for c in 0..x.cols() {
        let col = x.column(c);
        let scale = numerics::norm2(&col);
        let mut v = col;
        for _ in 0..2 {
            for b in &basis {
                let coef = numerics::dot(b, &v);
                numerics::axpy(-coef, b, &mut v);
            }
        }
        let norm = numerics::norm2(&v);
        if scale == 0.0 || norm <= 1e-9 * scale {
            bad.push(names[c].clone());
        } else {
            basis.push(v.into_iter().map(|t| t / norm).collect());
        }
    }
    bad
}

/// IRLS (Newton–Raphson with step halving) on an explicit design and 0/1 response.
pub fn fit_logistic_design(
    x: &Matrix,
    z: &[f64],
    names: &[String],
) -> Result<LogisticModel, PropensityError> {
    let (n, p) = (x.rows(), x.cols());
    if z.len() != n || names.len() != p {
        return Err(PropensityError::Dimension(format!(
            "{n}×{p} design with {} responses and {} names",
            z.len(),
            names.len()
        )));
    }
    let collinear = collinear_columns(x, names);
    if !collinear.is_empty() {
        return Err(PropensityError::RankDeficientDesign { columns: collinear });
    }

    let zbar = z.iter().sum::<f64>() / n as f64;
    let mut beta = vec![0.0; p];
    if names.first().is_some_and(|s| s == "(intercept)") && zbar > 0.0 && zbar < 1.0 {
        beta[0] = (zbar / (1.0 - zbar)).ln();
    }
    let mut eta = x.mul_vec(&beta).expect("dimension");
    let mut dev = deviance(&eta, z);
    let mut converged = false;
    let mut iterations = 0;
    let mut score_residual = f64::INFINITY;
    let mut info_factor = None;

    while iterations < MAX_ITERATIONS {
        let prob: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let resid: Vec<f64> = z.iter().zip(&prob).map(|(y, q)| y - q).collect();
        let score = x.tr_mul_vec(&resid).expect("dimension");
        score_residual = numerics::norm_inf(&score);

        let mut info = Matrix::zeros(p, p);
        for r in 0..n {
            let w = prob[r] * (1.0 - prob[r]);
            if w == 0.0 {
                continue;
            }
            let row = x.row(r);
            for a in 0..p {
                let wa = w * row[a];
                if wa == 0.0 {
                    continue;
                }
                let dst = info.row_mut(a);
                for b in 0..=a {
                    dst[b] += wa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                let v = info.get(a, b);
                info.set(b, a, v);
            }
        }
        let factor = numerics::cholesky(&info).ok();
        if score_residual <= SCORE_TOL {
            // a vanishing score with diverged predictors is separation, not a solution
            converged = numerics::norm_inf(&eta) <= SEPARATION_ETA;
            info_factor = factor;
            break;
        }
        let Some(f) = factor else {
            // information matrix collapsed: fitted scores have hit 0/1
            break;
        };
        iterations += 1;
        let step = f.solve(&score).expect("dimension");
        info_factor = Some(f);

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let trial_eta = x.mul_vec(&trial).expect("dimension");
            let trial_dev = deviance(&trial_eta, z);
            if trial_dev <= dev + 1e-12 * dev.abs().max(1.0) {
                beta = trial;
                eta = trial_eta;
                dev = trial_dev;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    let max_eta = numerics::norm_inf(&eta);
    let standard_errors = match &info_factor {
        Some(f) => f.inverse_diagonal().into_iter().map(f64::sqrt).collect(),
        None => vec![f64::NAN; p],
    };
    Ok(LogisticModel {
        coefficient_names: names.to_vec(),
        coefficients: beta,
        standard_errors,
        converged,
        iterations,
        max_abs_linear_predictor: max_eta,
        score_residual,
        separation: max_eta > SEPARATION_ETA,
        fitted: eta.iter().map(|&e| sigmoid(e)).collect(),
        n: [
            z.iter().filter(|&&v| v == 0.0).count(),
            z.iter().filter(|&&v| v != 0.0).count(),
        ],
    })
}

/// Composition of the pooled target population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Nu {
    /// `νₖ = nₖ / (n₀ + n₁)`
    #[default]
    Observed,
    /// `ν₀ = ν₁ = ½`
    Half,
    Explicit {
        nu0: f64,
        nu1: f64,
    },
}

impl Nu {
    pub fn resolve(self, n: [usize; 2]) -> Result<(f64, f64), PropensityError> {
        let (nu0, nu1) = match self {
            Nu::Observed => {
                let total = (n[0] + n[1]) as f64;
                (n[0] as f64 / total, n[1] as f64 / total)
            }
            Nu::Half => (0.5, 0.5),
            Nu::Explicit { nu0, nu1 } => (nu0, nu1),
        };
        if !(nu0 >= 0.0 && nu1 >= 0.0 && ((nu0 + nu1) - 1.0).abs() <= 1e-12) {
            return Err(PropensityError::InvalidNu { nu0, nu1 });
        }
        Ok((nu0, nu1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityWeights {
    pub p_hat: [Vec<f64>; 2],
    pub unnormalized: [Vec<f64>; 2],
    /// Normalized to sum 1 within each study.
    pub weights: [Vec<f64>; 2],
    pub nu: (f64, f64),
    pub ess: [f64; 2],
    pub separation_flag: bool,
    /// Patients with `p̂` outside `[1e-6, 1 − 1e-6]`.
    pub extreme_count: usize,
    pub truncated_at: Option<[f64; 2]>,
    pub warnings: Vec<String>,
}

impl PropensityWeights {
    pub fn scaled(&self, total: [f64; 2]) -> [Vec<f64>; 2] {
        [0, 1].map(|k| scale_to(&self.weights[k], total[k]))
    }
}

/// Unnormalized pooled-population weight of one patient.
pub fn pooled_weight(p_hat: f64, study: u8, nu: (f64, f64)) -> f64 {
    let num = p_hat * nu.1 + (1.0 - p_hat) * nu.0;
    if study == 0 {
        num / (1.0 - p_hat)
    } else {
        num / p_hat
    }
}

/// Weights from fitted scores; `truncate_quantile` caps each study's weights at that quantile.
pub fn pooled_weights(
    model: &LogisticModel,
    nu: Nu,
    truncate_quantile: Option<f64>,
) -> Result<PropensityWeights, PropensityError> {
    weights_from_scores(
        model.fitted_by_study(),
        nu,
        truncate_quantile,
        model.separation,
    )
}

pub fn weights_from_scores(
    p_hat: [Vec<f64>; 2],
    nu: Nu,
    truncate_quantile: Option<f64>,
    separation_flag: bool,
) -> Result<PropensityWeights, PropensityError> {
    let n = [p_hat[0].len(), p_hat[1].len()];
    for k in 0..2u8 {
        if n[k as usize] == 0 {
            return Err(PropensityError::EmptyStudy(k));
        }
    }
    let nu = nu.resolve(n)?;
    if let Some(q) = truncate_quantile {
        if !(q > 0.0 && q <= 1.0) {
            return Err(PropensityError::InvalidQuantile(q));
        }
    }
    let mut warnings = Vec::new();
    let extreme_count = p_hat
        .iter()
        .flatten()
        .filter(|&&p| !(EXTREME_P..=1.0 - EXTREME_P).contains(&p))
        .count();
    if extreme_count > 0 {
        warnings.push(format!(
            "ExtremePropensity: {extreme_count} fitted scores outside [{EXTREME_P}, {}]",
            1.0 - EXTREME_P
        ));
    }
    if separation_flag {
        warnings.push(
            "Separation: logistic fit did not converge and linear predictors diverged".into(),
        );
    }
    let mut unnormalized = [0u8, 1].map(|k| {
        p_hat[k as usize]
            .iter()
            .map(|&p| pooled_weight(p, k, nu))
            .collect::<Vec<_>>()
    });
    let truncated_at = truncate_quantile.map(|q| {
        [0, 1].map(|k| {
            let cap = quantile_type7(&unnormalized[k], q);
            unnormalized[k].iter_mut().for_each(|w| *w = w.min(cap));
            cap
        })
    });
    let weights = [0, 1].map(|k| scale_to(&unnormalized[k], 1.0));
    let ess_k = [
        ess(&weights[0]).unwrap_or(f64::NAN),
        ess(&weights[1]).unwrap_or(f64::NAN),
    ];
    Ok(PropensityWeights {
        p_hat,
        unnormalized,
        weights,
        nu,
        ess: ess_k,
        separation_flag,
        extreme_count,
        truncated_at,
        warnings,
    })
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile_type7(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturatedCell {
    pub levels: Vec<String>,
    pub n0: usize,
    pub n1: usize,
    /// `n₁,c / n_c`
    pub p_hat: f64,
    pub separated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturatedReport {
    pub cells: Vec<SaturatedCell>,
    pub separation_cells: Vec<Vec<String>>,
    pub weights: PropensityWeights,
    pub column_names: Vec<String>,
    /// Weighted level proportions over doubly-occupied cells, per study.
    pub weighted_proportions: [Vec<f64>; 2],
    pub max_gap: f64,
}

/// Closed-form saturated model: one score per observed covariate combination.
pub fn saturated_exact_check(
    table: &CovariateTable,
    nu: Nu,
) -> Result<SaturatedReport, PropensityError> {
    let schema = table.schema();
    if let Some(c) = schema
        .covariates()
        .iter()
        .find(|c| matches!(c.kind, CovariateKind::Continuous))
    {
        return Err(PropensityError::NotCategorical(c.name.clone()));
    }
    let key_of = |row: &[Value]| -> Vec<usize> {
        row.iter()
            .map(|v| match v {
                Value::Level(l) => *l,
                Value::Number(x) => *x as usize,
            })
            .collect()
    };
    let mut counts: BTreeMap<Vec<usize>, [usize; 2]> = BTreeMap::new();
    for (row, &s) in table.values().iter().zip(table.study()) {
        counts.entry(key_of(row)).or_default()[s as usize] += 1;
    }
    let label = |ci: usize, l: usize| -> String {
        match &schema.covariates()[ci].kind {
            CovariateKind::Categorical { levels } => levels[l].clone(),
            CovariateKind::Binary {
                levels: Some(levels),
            } => levels[l].clone(),
            _ => l.to_string(),
        }
    };
    let cells: Vec<SaturatedCell> = counts
        .iter()
        .map(|(key, c)| SaturatedCell {
            levels: key
                .iter()
                .enumerate()
                .map(|(ci, &l)| label(ci, l))
                .collect(),
            n0: c[0],
            n1: c[1],
            p_hat: c[1] as f64 / (c[0] + c[1]) as f64,
            separated: c[0] == 0 || c[1] == 0,
        })
        .collect();

    let rows = [table.rows_of(0), table.rows_of(1)];
    let p_hat = [0, 1].map(|k| {
        rows[k]
            .iter()
            .map(|&i| {
                let c = counts[&key_of(&table.values()[i])];
                c[1] as f64 / (c[0] + c[1]) as f64
            })
            .collect::<Vec<_>>()
    });
    let weights = weights_from_scores(p_hat, nu, None, false)?;

    // balance over doubly-occupied cells only
    let dm = crate::data::encode(table);
    let mut proportions = [vec![0.0; dm.n_cols()], vec![0.0; dm.n_cols()]];
    for k in 0..2u8 {
        let x = dm.study(k);
        let mut total = 0.0;
        for (r, &i) in rows[k as usize].iter().enumerate() {
            let c = counts[&key_of(&table.values()[i])];
            if c[0] == 0 || c[1] == 0 {
                continue;
            }
            let w = weights.weights[k as usize][r];
            total += w;
            numerics::axpy(w, x.row(r), &mut proportions[k as usize]);
        }
        if total > 0.0 {
            proportions[k as usize].iter_mut().for_each(|v| *v /= total);
        }
    }
    let max_gap = proportions[0]
        .iter()
        .zip(&proportions[1])
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(SaturatedReport {
        separation_cells: cells
            .iter()
            .filter(|c| c.separated)
            .map(|c| c.levels.clone())
            .collect(),
        cells,
        weights,
        column_names: dm.column_names,
        weighted_proportions: proportions,
        max_gap,
    })
}
