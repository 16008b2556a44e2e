//! Strictly convex quadratic programming by the Goldfarb–Idnani dual active-set method.
//!
//! Problems have the form
//!
//! ```text
//!     minimize    bᵀw + wᵀQw
//!     subject to  eq_Aᵀ w  = eq_c
//!                 ineq_Aᵀ w ≥ ineq_c
//! ```
//!
//! with `Q` symmetric positive definite and the constraint normals stored as the
//! *columns* of `eq_A` and `ineq_A`. The dual method starts at the unconstrained
//! minimum and adds violated constraints one at a time, dropping active
//! inequalities whose multipliers would turn negative, until the primal iterate is
//! feasible. Termination is finite for strictly convex objectives.
//!
//! The active-set factorization is kept in thin form: with `2Q = L·Lᵀ` the active
//! normals in the transformed space `L⁻¹N` are factored as `Q₁·R`. The primal step
//! direction is `L⁻ᵀ(I − Q₁Q₁ᵀ)L⁻¹n` and the dual direction is `R⁻¹Q₁ᵀL⁻¹n`, so
//! memory scales with the active-set size rather than `n²`. When `Q` is diagonal the
//! transformation is elementwise and sparse constraint normals stay sparse.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    self, apply_givens, axpy, givens, norm2, CholeskyFactor, Matrix, NumericsError,
};

/// Absolute primal/dual feasibility tolerance reported alongside every solve.
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Relative size of the new `R` pivot below which a constraint is treated as
/// linearly dependent on the active set.
pub const DEPENDENCE_TOL: f64 = 1e-10;
/// Relative slack below which an inactive constraint counts as violated.
pub const VIOLATION_TOL: f64 = 1e-11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("objective matrix: {0}")]
    Objective(NumericsError),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("equality constraint {index} is linearly dependent on earlier equalities")]
    DegenerateEqualities { index: usize },
    #[error("solver stalled after {iterations} iterations")]
    SolverStalled { iterations: usize },
}

/// A strictly convex QP in the orientation described in the module docs.
#[derive(Debug, Clone)]
pub struct QpProblem {
    q: Matrix,
    b: Vec<f64>,
    eq_a: Matrix,
    eq_c: Vec<f64>,
    ineq_a: Matrix,
    ineq_c: Vec<f64>,
    factor: CholeskyFactor,
}

impl QpProblem {
    /// `eq_a` is `n × m_e`, `ineq_a` is `n × m_i`; each column is one constraint.
    pub fn new(
        q: Matrix,
        b: Vec<f64>,
        eq_a: Matrix,
        eq_c: Vec<f64>,
        ineq_a: Matrix,
        ineq_c: Vec<f64>,
    ) -> Result<Self, QpError> {
        let n = q.rows();
        let check = |what, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(QpError::DimensionMismatch {
                    what,
                    expected,
                    got,
                })
            }
        };
        check("Q columns", n, q.cols())?;
        check("b", n, b.len())?;
        check("eq_A rows", n, eq_a.rows())?;
        check("eq_c", eq_a.cols(), eq_c.len())?;
        check("ineq_A rows", n, ineq_a.rows())?;
        check("ineq_c", ineq_a.cols(), ineq_c.len())?;
        if b.iter().chain(&eq_c).chain(&ineq_c).any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("linear term or right-hand side"));
        }
        let mut g = q.clone();
        for v in 0..n {
            for c in 0..n {
                g.set(v, c, 2.0 * q.get(v, c));
            }
        }
        let factor = numerics::cholesky(&g).map_err(QpError::Objective)?;
        Ok(Self {
            q,
            b,
            eq_a,
            eq_c,
            ineq_a,
            ineq_c,
            factor,
        })
    }

    pub fn n(&self) -> usize {
        self.q.rows()
    }
    pub fn q(&self) -> &Matrix {
        &self.q
    }
    pub fn b(&self) -> &[f64] {
        &self.b
    }
    pub fn eq_a(&self) -> &Matrix {
        &self.eq_a
    }
    pub fn eq_c(&self) -> &[f64] {
        &self.eq_c
    }
    pub fn ineq_a(&self) -> &Matrix {
        &self.ineq_a
    }
    pub fn ineq_c(&self) -> &[f64] {
        &self.ineq_c
    }
    pub fn num_eq(&self) -> usize {
        self.eq_c.len()
    }
    pub fn num_ineq(&self) -> usize {
        self.ineq_c.len()
    }

    /// `bᵀw + wᵀQw`
    pub fn objective(&self, w: &[f64]) -> f64 {
        let qw = self.q.mul_vec(w).expect("length checked by caller");
        numerics::dot(&self.b, w) + numerics::dot(w, &qw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QpSolution {
    pub w: Vec<f64>,
    pub objective: f64,
    /// Indices into the inequality block of the constraints binding at `w`.
    pub active_set: Vec<usize>,
    /// Multipliers for equalities.
    pub eq_multipliers: Vec<f64>,
    /// Multipliers for inequalities (zero for inactive ones).
    pub ineq_multipliers: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
struct SparseVec {
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl SparseVec {
    fn from_column(m: &Matrix, col: usize) -> Self {
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for r in 0..m.rows() {
            let v = m.get(r, col);
            if v != 0.0 {
                idx.push(r);
                val.push(v);
            }
        }
        Self { idx, val }
    }

    fn dot_dense(&self, x: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, v)| v * x[i]).sum()
    }

    fn norm_inf(&self) -> f64 {
        self.val.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// How `L` (with `2Q = LLᵀ`) is applied.
enum Transform {
    Diagonal(Vec<f64>),
    Dense(CholeskyFactor),
}

impl Transform {
    /// `L⁻¹ n` as a dense vector.
    fn forward(&self, n: &SparseVec, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        match self {
            Transform::Diagonal(l) => {
                for (&i, v) in n.idx.iter().zip(&n.val) {
                    out[i] = v / l[i];
                }
                out
            }
            Transform::Dense(f) => {
                for (&i, v) in n.idx.iter().zip(&n.val) {
                    out[i] = *v;
                }
                numerics::solve_triangular(f, &out, false).expect("dimension matches")
            }
        }
    }

    /// `L⁻ᵀ v`
    fn backward(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Transform::Diagonal(l) => v.iter().zip(l).map(|(a, b)| a / b).collect(),
            Transform::Dense(f) => {
                numerics::solve_triangular(f, v, true).expect("dimension matches")
            }
        }
    }
}

struct ActiveEntry {
    /// Global constraint index: equalities first, then inequalities.
    constraint: usize,
    sign: f64,
}

/// Thin factorization of the transformed active normals, `L⁻¹N = Q₁R`.
struct ActiveFactor {
    basis: Vec<Vec<f64>>,
    /// Upper-triangular `R`, stored by column.
    r_cols: Vec<Vec<f64>>,
}

impl ActiveFactor {
    fn len(&self) -> usize {
        self.basis.len()
    }

    /// Returns `(d1, v)` with `ñ = Q₁ d1 + v` and `v ⟂ Q₁`.
    fn project(&self, nt: &[f64], nt_sparse: Option<&[usize]>) -> (Vec<f64>, Vec<f64>) {
        let d1: Vec<f64> = match nt_sparse {
            Some(idx) => self
                .basis
                .iter()
                .map(|col| idx.iter().map(|&i| col[i] * nt[i]).sum())
                .collect(),
            None => self
                .basis
                .iter()
                .map(|col| numerics::dot(col, nt))
                .collect(),
        };
        let mut v = nt.to_vec();
        for (col, &c) in self.basis.iter().zip(&d1) {
            if c != 0.0 {
                axpy(-c, col, &mut v);
            }
        }
        let mut d1 = d1;
        // classical Gram-Schmidt needs a second pass when heavy cancellation occurred
        let nt_norm = norm2(nt);
        if norm2(&v) < 0.5 * nt_norm && !self.basis.is_empty() {
            let corr: Vec<f64> = self
                .basis
                .iter()
                .map(|col| numerics::dot(col, &v))
                .collect();
            for ((col, &c), d) in self.basis.iter().zip(&corr).zip(d1.iter_mut()) {
                axpy(-c, col, &mut v);
                *d += c;
            }
        }
        (d1, v)
    }

    /// Solves `R r = d`.
    fn solve_r(&self, d: &[f64]) -> Vec<f64> {
        let q = self.len();
        let mut r = d.to_vec();
        for k in (0..q).rev() {
            r[k] /= self.r_cols[k][k];
            let rk = r[k];
            for i in 0..k {
                r[i] -= self.r_cols[k][i] * rk;
            }
        }
        r
    }

    fn push(&mut self, d1: Vec<f64>, v: Vec<f64>, v_norm: f64) {
        let mut col = d1;
        col.push(v_norm);
        self.r_cols.push(col);
        self.basis.push(v.into_iter().map(|x| x / v_norm).collect());
    }

    /// Removes active position `l`, restoring triangularity with Givens rotations.
    fn remove(&mut self, l: usize) {
        self.r_cols.remove(l);
        let q = self.r_cols.len();
        for k in l..q {
            let (c, s, rr) = givens(self.r_cols[k][k], self.r_cols[k][k + 1]);
            self.r_cols[k][k] = rr;
            self.r_cols[k].truncate(k + 1);
            for j in (k + 1)..q {
                let a = self.r_cols[j][k];
                let b = self.r_cols[j][k + 1];
                self.r_cols[j][k] = c * a + s * b;
                self.r_cols[j][k + 1] = -s * a + c * b;
            }
            let (left, right) = self.basis.split_at_mut(k + 1);
            apply_givens(c, s, &mut left[k], &mut right[0]);
        }
        self.basis.remove(q);
    }
}

/// Solves the QP. `Infeasible` is a status, not an error.
pub fn solve_qp(p: &QpProblem) -> Result<QpSolution, QpError> {
    let n = p.n();
    let m_e = p.num_eq();
    let m_i = p.num_ineq();
    let normals: Vec<SparseVec> = (0..m_e)
        .map(|j| SparseVec::from_column(&p.eq_a, j))
        .chain((0..m_i).map(|j| SparseVec::from_column(&p.ineq_a, j)))
        .collect();
    let rhs: Vec<f64> = p.eq_c.iter().chain(&p.ineq_c).copied().collect();
    let is_sparse: Vec<bool> = normals.iter().map(|s| s.idx.len() * 4 < n).collect();

    let transform = if p.q.is_diagonal() {
        Transform::Diagonal((0..n).map(|i| p.factor.lower().get(i, i)).collect())
    } else {
        Transform::Dense(p.factor.clone())
    };

    // unconstrained minimum x = -G⁻¹ b
    let mut x: Vec<f64> = p.factor.solve(&p.b).expect("dimension checked");
    x.iter_mut().for_each(|v| *v = -*v);

    let mut active: Vec<ActiveEntry> = Vec::new();
    let mut is_active = vec![false; m_e + m_i];
    let mut u: Vec<f64> = Vec::new();
    let mut fac = ActiveFactor {
        basis: Vec::new(),
        r_cols: Vec::new(),
    };
    let max_iter = 50 * (n + m_i);
    let mut iterations = 0usize;
    let mut next_eq = 0usize;

    loop {
        // step 1: pick the next constraint to add
        let (p_idx, sign) = if next_eq < m_e {
            let j = next_eq;
            next_eq += 1;
            let s = normals[j].dot_dense(&x) - rhs[j];
            (j, if s > 0.0 { -1.0 } else { 1.0 })
        } else {
            let x_scale = numerics::norm_inf(&x);
            let mut best: Option<(usize, f64)> = None;
            for j in m_e..(m_e + m_i) {
                if is_active[j] {
                    continue;
                }
                let s = normals[j].dot_dense(&x) - rhs[j];
                let tol = VIOLATION_TOL * (1.0 + rhs[j].abs() + normals[j].norm_inf() * x_scale);
                if s < -tol && best.is_none_or(|(_, bs)| s < bs) {
                    best = Some((j, s));
                }
            }
            match best {
                Some((j, _)) => (j, 1.0),
                None => break,
            }
        };

        let mut normal = normals[p_idx].clone();
        if sign < 0.0 {
            normal.val.iter_mut().for_each(|v| *v = -*v);
        }
        let c_p = sign * rhs[p_idx];
        let mut u_new = 0.0;
        let nt = transform.forward(&normal, n);
        let nt_norm = norm2(&nt);
        let sparse_idx = if is_sparse[p_idx] && matches!(transform, Transform::Diagonal(_)) {
            Some(normal.idx.clone())
        } else {
            None
        };

        // step 2: iterate partial steps until p becomes active
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpError::SolverStalled { iterations });
            }
            let (d1, v) = fac.project(&nt, sparse_idx.as_deref());
            let v_norm = norm2(&v);
            let dependent = v_norm <= DEPENDENCE_TOL * nt_norm;
            let r = fac.solve_r(&d1);

            if dependent && p_idx < m_e {
                return Err(QpError::DegenerateEqualities { index: p_idx });
            }

            // dual step length over active inequalities
            let mut t1 = f64::INFINITY;
            let mut drop_pos: Option<usize> = None;
            for (k, entry) in active.iter().enumerate() {
                if entry.constraint < m_e || r[k] <= 0.0 {
                    continue;
                }
                let ratio = u[k] / r[k];
                let better = match drop_pos {
                    None => true,
                    Some(prev) => {
                        ratio < t1 || (ratio == t1 && entry.constraint < active[prev].constraint)
                    }
                };
                if better {
                    t1 = ratio;
                    drop_pos = Some(k);
                }
            }

            let s_p = normal.dot_dense(&x) - c_p;
            let (z, t2) = if dependent {
                (None, f64::INFINITY)
            } else {
                let z = transform.backward(&v);
                // zᵀn = ‖v‖² after orthogonalization
                let t2 = (-s_p / (v_norm * v_norm)).max(0.0);
                (Some(z), t2)
            };

            let t = t1.min(t2);
            if t.is_infinite() {
                return Ok(finish(p, x, &active, &u, QpStatus::Infeasible, iterations));
            }

            for (uk, rk) in u.iter_mut().zip(&r) {
                *uk -= t * rk;
            }
            u_new += t;

            if let Some(z) = &z {
                axpy(t, z, &mut x);
            }

            if z.is_some() && t2 <= t1 {
                fac.push(d1, v, v_norm);
                active.push(ActiveEntry {
                    constraint: p_idx,
                    sign,
                });
                is_active[p_idx] = true;
                u.push(u_new);
                break;
            }

            let l = drop_pos.expect("finite t1 has a blocking constraint");
            is_active[active[l].constraint] = false;
            active.remove(l);
            u.remove(l);
            fac.remove(l);
        }
    }

    Ok(finish(p, x, &active, &u, QpStatus::Optimal, iterations))
}

fn finish(
    p: &QpProblem,
    w: Vec<f64>,
    active: &[ActiveEntry],
    u: &[f64],
    status: QpStatus,
    iterations: usize,
) -> QpSolution {
    let m_e = p.num_eq();
    let mut eq_multipliers = vec![0.0; m_e];
    let mut ineq_multipliers = vec![0.0; p.num_ineq()];
    let mut active_set = Vec::new();
    for (entry, &mult) in active.iter().zip(u) {
        if entry.constraint < m_e {
            eq_multipliers[entry.constraint] = entry.sign * mult;
        } else {
            ineq_multipliers[entry.constraint - m_e] = mult;
            active_set.push(entry.constraint - m_e);
        }
    }
    active_set.sort_unstable();
    let objective = p.objective(&w);
    QpSolution {
        w,
        objective,
        active_set,
        eq_multipliers,
        ineq_multipliers,
        status,
        iterations,
    }
}

/// Largest violations of the KKT conditions at a reported solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// max of equality residuals and inequality shortfalls
    pub primal_residual: f64,
    /// max of stationarity residual and negative inequality multipliers
    pub dual_violation: f64,
    /// max |λᵢ · slackᵢ| over inequalities
    pub complementarity_gap: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.primal_residual
            .max(self.dual_violation)
            .max(self.complementarity_gap)
    }
}

/// Independent KKT verifier working directly from the dense problem data.
pub fn check_kkt(p: &QpProblem, s: &QpSolution) -> KktReport {
    let w = &s.w;
    let eq_res = p.eq_a.tr_mul_vec(w).expect("dimension");
    let ineq_val = p.ineq_a.tr_mul_vec(w).expect("dimension");
    let mut primal: f64 = 0.0;
    for (v, c) in eq_res.iter().zip(&p.eq_c) {
        primal = primal.max((v - c).abs());
    }
    let slacks: Vec<f64> = ineq_val.iter().zip(&p.ineq_c).map(|(v, c)| v - c).collect();
    for sl in &slacks {
        primal = primal.max(-sl);
    }

    // 2Qw + b − eq_A λ_e − ineq_A λ_i
    let qw = p.q.mul_vec(w).expect("dimension");
    let ae = p.eq_a.mul_vec(&s.eq_multipliers).expect("dimension");
    let ai = p.ineq_a.mul_vec(&s.ineq_multipliers).expect("dimension");
    let mut dual: f64 = 0.0;
    for i in 0..p.n() {
        dual = dual.max((2.0 * qw[i] + p.b[i] - ae[i] - ai[i]).abs());
    }
    for l in &s.ineq_multipliers {
        dual = dual.max(-l);
    }
    let comp = slacks
        .iter()
        .zip(&s.ineq_multipliers)
        .fold(0.0_f64, |m, (sl, l)| m.max((sl * l).abs()));
    KktReport {
        primal_residual: primal,
        dual_violation: dual,
        complementarity_gap: comp,
    }
}
