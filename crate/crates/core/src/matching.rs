//! Exact covariate matching by minimum-norm weights.
//!
//! For studies with encoded covariates `X₀` (n₀ × p) and `X₁` (n₁ × p) we look for
//! `w = (w₀, w₁) ≥ 0` with `X₀ᵀw₀ = X₁ᵀw₁` and `Σw₀ = Σw₁ = 1`, minimising `‖w‖²`
//! (equivalently maximising the effective sample size). Constrained mode also
//! requires every pooled weighted mean `(X₀ᵀw₀ + X₁ᵀw₁)/2` to lie between the two
//! observed study means.
//!
//! The overparameterized dummy coding makes the balance rows of a categorical
//! covariate sum to the difference of the normalization rows, so linearly
//! dependent equality rows are pruned here before the system reaches the solver.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DesignMatrix;
use crate::lp::LpFeasibilityProblem;
use crate::numerics::{self, Matrix};
use crate::qp::{self, QpError, QpProblem, QpStatus};

/// Relative residual below which an equality row counts as dependent on earlier ones.
pub const ROW_DEPENDENCE_TOL: f64 = 1e-9;
/// Weights above this negative value are solver roundoff and clamp to zero.
pub const CLAMP_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("covariate subset is empty")]
    EmptySubset,
    #[error("encoded column index {0} out of range")]
    UnknownColumn(usize),
    #[error("study {0} has no patients")]
    EmptyStudy(u8),
    #[error("weights are all zero")]
    AllZero,
    #[error("negative weight {value} at position {index}")]
    NegativeWeight { index: usize, value: f64 },
    #[error("maximum weight cap must be positive, got {0}")]
    InvalidCap(f64),
    #[error(transparent)]
    Solver(#[from] QpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    #[default]
    Unconstrained,
    Constrained,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchSpec {
    pub mode: MatchMode,
    /// Encoded columns to balance; `None` means all.
    #[serde(default)]
    pub columns: Option<Vec<usize>>,
    /// Optional upper bound on any single weight (weights sum to 1 per study).
    #[serde(default)]
    pub max_weight: Option<f64>,
}

impl MatchSpec {
    pub fn unconstrained() -> Self {
        Self::default()
    }

    pub fn constrained() -> Self {
        Self {
            mode: MatchMode::Constrained,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStatus {
    Matched,
    NoSolution,
}

/// Constraint system plus the bookkeeping produced while building it.
#[derive(Debug, Clone)]
pub struct MatchQp {
    pub qp: QpProblem,
    /// Encoded columns that contribute balance (and box) rows.
    pub balanced_columns: Vec<usize>,
    /// Columns constant and equal across both studies.
    pub dropped_columns: Vec<usize>,
    /// Balance rows removed as linear combinations of earlier rows.
    pub pruned_rows: Vec<usize>,
    /// Columns whose box collapses to a point (equal observed means).
    pub degenerate_boxes: Vec<usize>,
    /// A pruned row contradicted the kept ones; no weighting can exist.
    pub inconsistent: bool,
    pub n0: usize,
    pub n1: usize,
}

/// Builds the quadratic program.
///
/// Equality block (as columns of `eq_A`): kept balance rows `(−X₀; X₁)ᵀ`, then the two
/// normalization rows. Inequality block: `n` nonnegativity rows, then in constrained
/// mode `p` lower box rows `(X₀; X₁)ᵀw ≥ 2·min(x̄₀, x̄₁)` followed by `p` upper box rows
/// `−(X₀; X₁)ᵀw ≥ −2·max(x̄₀, x̄₁)`, then optional weight caps.
pub fn build_qp(dm: &DesignMatrix, spec: &MatchSpec) -> Result<MatchQp, MatchError> {
    let (n0, n1) = (dm.n0(), dm.n1());
    if n0 == 0 {
        return Err(MatchError::EmptyStudy(0));
    }
    if n1 == 0 {
        return Err(MatchError::EmptyStudy(1));
    }
    let n = n0 + n1;
    let requested: Vec<usize> = match &spec.columns {
        Some(c) if c.is_empty() => return Err(MatchError::EmptySubset),
        Some(c) => c.clone(),
        None => (0..dm.n_cols()).collect(),
    };
    if let Some(&bad) = requested.iter().find(|&&c| c >= dm.n_cols()) {
        return Err(MatchError::UnknownColumn(bad));
    }
    if let Some(cap) = spec.max_weight {
        if !(cap > 0.0) {
            return Err(MatchError::InvalidCap(cap));
        }
    }

    let mut columns = Vec::new();
    let mut dropped = Vec::new();
    for &c in &requested {
        let first = dm.x0.get(0, c);
        let tol = 1e-12 * first.abs().max(1.0);
        let constant = (0..n0).all(|r| (dm.x0.get(r, c) - first).abs() <= tol)
            && (0..n1).all(|r| (dm.x1.get(r, c) - first).abs() <= tol);
        if constant {
            log::warn!(
                "column `{}` is constant in both studies; balance is vacuous, dropping it",
                dm.column_names[c]
            );
            dropped.push(c);
        } else {
            columns.push(c);
        }
    }

    // candidate equality rows over the n weights, normalization rows first for pruning
    let mut norm0 = vec![0.0; n];
    norm0[..n0].iter_mut().for_each(|v| *v = 1.0);
    let mut norm1 = vec![0.0; n];
    norm1[n0..].iter_mut().for_each(|v| *v = 1.0);
    let balance_row = |c: usize| -> Vec<f64> {
        (0..n0)
            .map(|r| -dm.x0.get(r, c))
            .chain((0..n1).map(|r| dm.x1.get(r, c)))
            .collect()
    };

    let mut basis = RowBasis::default();
    for row in [&norm0, &norm1] {
        let (norm, _, v, c) = basis.reduce(row, 1.0);
        basis.push(v, c, norm);
    }
    let mut kept = Vec::new();
    let mut pruned = Vec::new();
    let mut inconsistent = false;
    for &c in &columns {
        let row = balance_row(c);
        let (norm, scale, v, resid_rhs) = basis.reduce(&row, 0.0);
        if norm <= ROW_DEPENDENCE_TOL * scale {
            // dependent: the right-hand side must follow the same combination
            if resid_rhs.abs() > ROW_DEPENDENCE_TOL * scale.max(1.0) {
                inconsistent = true;
            }
            pruned.push(c);
        } else {
            basis.push(v, resid_rhs, norm);
            kept.push(c);
        }
    }

    let m_e = kept.len() + 2;
    let mut eq_a = Matrix::zeros(n, m_e);
    for (j, &c) in kept.iter().enumerate() {
        for (i, v) in balance_row(c).into_iter().enumerate() {
            eq_a.set(i, j, v);
        }
    }
    for i in 0..n {
        eq_a.set(i, m_e - 2, norm0[i]);
        eq_a.set(i, m_e - 1, norm1[i]);
    }
    let mut eq_c = vec![0.0; m_e];
    eq_c[m_e - 2] = 1.0;
    eq_c[m_e - 1] = 1.0;

    let means = dm.means();
    let boxed: &[usize] = match spec.mode {
        MatchMode::Constrained => &columns,
        MatchMode::Unconstrained => &[],
    };
    let caps = if spec.max_weight.is_some() { n } else { 0 };
    let m_i = n + 2 * boxed.len() + caps;
    let mut ineq_a = Matrix::zeros(n, m_i);
    let mut ineq_c = vec![0.0; m_i];
    for i in 0..n {
        ineq_a.set(i, i, 1.0);
    }
    let mut degenerate_boxes = Vec::new();
    for (k, &c) in boxed.iter().enumerate() {
        let lo_col = n + k;
        let hi_col = n + boxed.len() + k;
        for r in 0..n0 {
            ineq_a.set(r, lo_col, dm.x0.get(r, c));
            ineq_a.set(r, hi_col, -dm.x0.get(r, c));
        }
        for r in 0..n1 {
            ineq_a.set(n0 + r, lo_col, dm.x1.get(r, c));
            ineq_a.set(n0 + r, hi_col, -dm.x1.get(r, c));
        }
        let (m0, m1) = (means[0][c], means[1][c]);
        ineq_c[lo_col] = 2.0 * m0.min(m1);
        ineq_c[hi_col] = -2.0 * m0.max(m1);
        if m0 == m1 {
            degenerate_boxes.push(c);
        }
    }
    if let Some(cap) = spec.max_weight {
        let base = n + 2 * boxed.len();
        for i in 0..n {
            ineq_a.set(i, base + i, -1.0);
            ineq_c[base + i] = -cap;
        }
    }

    let qp = QpProblem::new(
        Matrix::identity(n),
        vec![0.0; n],
        eq_a,
        eq_c,
        ineq_a,
        ineq_c,
    )?;
    Ok(MatchQp {
        qp,
        balanced_columns: kept,
        dropped_columns: dropped,
        pruned_rows: pruned,
        degenerate_boxes,
        inconsistent,
        n0,
        n1,
    })
}

/// Orthonormal basis of accepted equality rows, each carrying its transformed right-hand side.
#[derive(Default)]
struct RowBasis {
    rows: Vec<(Vec<f64>, f64)>,
}

impl RowBasis {
    /// Returns `(‖residual‖, ‖row‖, residual, residual rhs)`.
    fn reduce(&self, row: &[f64], rhs: f64) -> (f64, f64, Vec<f64>, f64) {
        let mut v = row.to_vec();
        let mut c = rhs;
        for _ in 0..2 {
            for (b, bc) in &self.rows {
                let coef = numerics::dot(b, &v);
                numerics::axpy(-coef, b, &mut v);
                c -= coef * bc;
            }
        }
        (numerics::norm2(&v), numerics::norm2(row), v, c)
    }

    fn push(&mut self, v: Vec<f64>, c: f64, norm: f64) {
        self.rows
            .push((v.iter().map(|x| x / norm).collect(), c / norm));
    }
}

/// The linear existence problem behind [`build_qp`]: box rows get slack variables
/// so that everything is an equality over nonnegative unknowns.
pub fn feasibility_problem(built: &MatchQp) -> LpFeasibilityProblem {
    let p = &built.qp;
    let n = p.n();
    let m_e = p.num_eq();
    let extra = p.num_ineq() - n;
    let mut a = Matrix::zeros(n + extra, m_e + extra);
    let mut c = Vec::with_capacity(m_e + extra);
    for j in 0..m_e {
        for i in 0..n {
            a.set(i, j, p.eq_a().get(i, j));
        }
        c.push(p.eq_c()[j]);
    }
    for k in 0..extra {
        let col = m_e + k;
        for i in 0..n {
            a.set(i, col, p.ineq_a().get(i, n + k));
        }
        // aᵀw − s = c, s ≥ 0
        a.set(n + k, col, -1.0);
        c.push(p.ineq_c()[n + k]);
    }
    LpFeasibilityProblem::new(a, c).expect("finite system")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchDiagnostics {
    pub dropped_columns: Vec<String>,
    pub pruned_rows: Vec<String>,
    pub degenerate_boxes: Vec<String>,
    /// Most negative raw weight before clamping (0 if none).
    pub min_raw_weight: f64,
    /// Largest |weighted mean₀ − weighted mean₁| over balanced columns.
    pub max_balance_gap: f64,
    pub solver_iterations: usize,
    pub feasibility_tol: f64,
    pub dependence_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSolution {
    pub status: MatchStatus,
    pub mode: MatchMode,
    /// Clamped weights per study (each sums to 1); empty when there is no solution.
    pub weights: [Vec<f64>; 2],
    /// Weights exactly as returned by the solver.
    pub raw_weights: [Vec<f64>; 2],
    pub ess: Option<[f64; 2]>,
    pub ess_combined: Option<f64>,
    /// `‖w‖²`
    pub objective: Option<f64>,
    /// Weighted means of every encoded column, per study.
    pub weighted_means: Option<[Vec<f64>; 2]>,
    pub column_names: Vec<String>,
    pub diagnostics: MatchDiagnostics,
}

impl WeightSolution {
    pub fn is_matched(&self) -> bool {
        self.status == MatchStatus::Matched
    }

    /// Weights rescaled to sum to `total` within each study.
    pub fn scaled(&self, total: [f64; 2]) -> [Vec<f64>; 2] {
        [0, 1].map(|k| scale_to(&self.weights[k], total[k]))
    }
}

pub(crate) fn scale_to(w: &[f64], total: f64) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v * total / s).collect()
}

/// Computes minimum-norm exact-matching weights.
pub fn match_weights(dm: &DesignMatrix, spec: &MatchSpec) -> Result<WeightSolution, MatchError> {
    let built = build_qp(dm, spec)?;
    let names = |idx: &[usize]| {
        idx.iter()
            .map(|&c| dm.column_names[c].clone())
            .collect::<Vec<_>>()
    };
    let mut diagnostics = MatchDiagnostics {
        dropped_columns: names(&built.dropped_columns),
        pruned_rows: names(&built.pruned_rows),
        degenerate_boxes: names(&built.degenerate_boxes),
        feasibility_tol: qp::FEASIBILITY_TOL,
        dependence_tol: qp::DEPENDENCE_TOL,
        ..Default::default()
    };
    let no_solution = |diagnostics| WeightSolution {
        status: MatchStatus::NoSolution,
        mode: spec.mode,
        weights: [Vec::new(), Vec::new()],
        raw_weights: [Vec::new(), Vec::new()],
        ess: None,
        ess_combined: None,
        objective: None,
        weighted_means: None,
        column_names: dm.column_names.clone(),
        diagnostics,
    };
    if built.inconsistent {
        return Ok(no_solution(diagnostics));
    }
    let sol = qp::solve_qp(&built.qp)?;
    diagnostics.solver_iterations = sol.iterations;
    if sol.status == QpStatus::Infeasible {
        return Ok(no_solution(diagnostics));
    }

    let n0 = built.n0;
    let raw = [sol.w[..n0].to_vec(), sol.w[n0..].to_vec()];
    diagnostics.min_raw_weight = sol.w.iter().fold(0.0_f64, |m, &v| m.min(v));
    if diagnostics.min_raw_weight < -CLAMP_TOL {
        log::warn!(
            "solver returned weight {} below the clamp tolerance",
            diagnostics.min_raw_weight
        );
    }
    let weights = raw
        .clone()
        .map(|w| w.into_iter().map(|v| v.max(0.0)).collect::<Vec<_>>());
    let ess_k = [ess(&weights[0])?, ess(&weights[1])?];
    let all: Vec<f64> = weights[0].iter().chain(&weights[1]).copied().collect();
    let means = weighted_column_means(dm, &weights);
    diagnostics.max_balance_gap = built
        .balanced_columns
        .iter()
        .chain(&built.pruned_rows)
        .map(|&c| (means[0][c] - means[1][c]).abs())
        .fold(0.0, f64::max);

    Ok(WeightSolution {
        status: MatchStatus::Matched,
        mode: spec.mode,
        objective: Some(all.iter().map(|v| v * v).sum()),
        ess_combined: Some(ess(&all)?),
        ess: Some(ess_k),
        weighted_means: Some(means),
        weights,
        raw_weights: raw,
        column_names: dm.column_names.clone(),
        diagnostics,
    })
}

/// `Σ wᵢxᵢⱼ / Σ wᵢ` for every column and both studies.
pub fn weighted_column_means(dm: &DesignMatrix, weights: &[Vec<f64>; 2]) -> [Vec<f64>; 2] {
    [0u8, 1].map(|k| {
        let x = dm.study(k);
        let w = &weights[k as usize];
        let total: f64 = w.iter().sum();
        let mut m = x.tr_mul_vec(w).expect("weights match rows");
        m.iter_mut().for_each(|v| *v /= total);
        m
    })
}

/// Effective sample size `(Σw)² / Σw²`.
pub fn ess(w: &[f64]) -> Result<f64, MatchError> {
    if let Some((index, &value)) = w.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(MatchError::NegativeWeight { index, value });
    }
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    if s2 == 0.0 {
        return Err(MatchError::AllZero);
    }
    Ok(s * s / s2)
}
