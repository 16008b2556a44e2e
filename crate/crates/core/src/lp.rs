//! Existence check for nonnegative solutions of `Aᵀw = c` by phase-1 simplex.
//!
//! Dense tableau with Bland's rule, so cycling cannot occur. Only the phase-1
//! objective (sum of artificial variables) is minimised; there is no phase 2.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Matrix;

/// Phase-1 optimum above this value means no feasible point exists.
pub const INFEASIBILITY_TOL: f64 = 1e-8;
const PIVOT_TOL: f64 = 1e-11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("eq_c has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite entry in the constraint system")]
    NonFinite,
}

/// `eq_Aᵀ w = eq_c`, `w ≥ 0`, with `eq_A` of shape `n × m`.
#[derive(Debug, Clone)]
pub struct LpFeasibilityProblem {
    eq_a: Matrix,
    eq_c: Vec<f64>,
}

impl LpFeasibilityProblem {
    pub fn new(eq_a: Matrix, eq_c: Vec<f64>) -> Result<Self, LpError> {
        if eq_a.cols() != eq_c.len() {
            return Err(LpError::DimensionMismatch {
                expected: eq_a.cols(),
                got: eq_c.len(),
            });
        }
        if eq_c.iter().any(|v| !v.is_finite()) || eq_a.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite);
        }
        Ok(Self { eq_a, eq_c })
    }

    pub fn eq_a(&self) -> &Matrix {
        &self.eq_a
    }

    pub fn eq_c(&self) -> &[f64] {
        &self.eq_c
    }

    /// `‖eq_Aᵀw − eq_c‖∞`
    pub fn residual(&self, w: &[f64]) -> f64 {
        let v = self.eq_a.tr_mul_vec(w).expect("dimension");
        v.iter()
            .zip(&self.eq_c)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Feasibility {
    Feasible { witness: Vec<f64> },
    Infeasible { phase1_objective: f64 },
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible { .. })
    }
}

/// Runs phase-1 simplex on the problem.
pub fn is_feasible(p: &LpFeasibilityProblem) -> Feasibility {
    let n = p.eq_a.rows();
    let m = p.eq_a.cols();
    if m == 0 {
        return Feasibility::Feasible {
            witness: vec![0.0; n],
        };
    }
    // tableau: m rows of [A-row (n) | artificials (m) | rhs]
    let width = n + m + 1;
    let mut tab = vec![0.0; m * width];
    for i in 0..m {
        let flip = if p.eq_c[i] < 0.0 { -1.0 } else { 1.0 };
        let row = &mut tab[i * width..(i + 1) * width];
        for k in 0..n {
            row[k] = flip * p.eq_a.get(k, i);
        }
        row[n + i] = 1.0;
        row[n + m] = flip * p.eq_c[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    // reduced costs of the phase-1 objective
    let mut cost = vec![0.0; width];
    for i in 0..m {
        for k in 0..n {
            cost[k] -= tab[i * width + k];
        }
        cost[n + m] -= tab[i * width + n + m];
    }

    loop {
        // Bland: lowest-index improving column
        let Some(enter) = (0..n + m).find(|&j| cost[j] < -PIVOT_TOL) else {
            break;
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let a = tab[i * width + enter];
            if a > PIVOT_TOL {
                let ratio = tab[i * width + n + m] / a;
                let better = match leave {
                    None => true,
                    Some((li, lr)) => {
                        ratio < lr - 1e-15 * lr.abs().max(1.0)
                            || ((ratio - lr).abs() <= 1e-15 * lr.abs().max(1.0)
                                && basis[i] < basis[li])
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        // phase-1 objective is bounded below by zero, so a pivot row always exists
        let Some((r, _)) = leave else { break };
        pivot(&mut tab, &mut cost, width, m, r, enter);
        basis[r] = enter;
    }

    let objective = -cost[n + m];
    if objective > INFEASIBILITY_TOL {
        return Feasibility::Infeasible {
            phase1_objective: objective,
        };
    }
    let mut witness = vec![0.0; n];
    for (i, &b) in basis.iter().enumerate() {
        if b < n {
            witness[b] = tab[i * width + n + m].max(0.0);
        }
    }
    Feasibility::Feasible { witness }
}

fn pivot(tab: &mut [f64], cost: &mut [f64], width: usize, m: usize, r: usize, col: usize) {
    let piv = tab[r * width + col];
    for v in &mut tab[r * width..(r + 1) * width] {
        *v /= piv;
    }
    let pivot_row: Vec<f64> = tab[r * width..(r + 1) * width].to_vec();
    for i in 0..m {
        if i == r {
            continue;
        }
        let f = tab[i * width + col];
        if f != 0.0 {
            let row = &mut tab[i * width..(i + 1) * width];
            for (v, pr) in row.iter_mut().zip(&pivot_row) {
                *v -= f * pr;
            }
            row[col] = 0.0;
        }
    }
    let f = cost[col];
    if f != 0.0 {
        for (v, pr) in cost.iter_mut().zip(&pivot_row) {
            *v -= f * pr;
        }
        cost[col] = 0.0;
    }
}
