//! Dense row-major linear algebra shared by the solvers.
//!
//! Problem sizes here are small (hundreds of patients, dozens of columns), so
//! everything is plain `Vec<f64>` storage without any sparse structure.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is not symmetric (entry ({row}, {col}))")]
    NotSymmetric { row: usize, col: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix must have at least one row and column")]
    Empty,
}

/// Dense matrix stored in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major entries, rejecting NaN/Inf.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(NumericsError::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_row_major(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `self * v`
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>, NumericsError> {
        if v.len() != self.cols {
            return Err(NumericsError::DimensionMismatch {
                expected: self.cols,
                got: v.len(),
            });
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    /// `selfᵀ * v`
    pub fn tr_mul_vec(&self, v: &[f64]) -> Result<Vec<f64>, NumericsError> {
        if v.len() != self.rows {
            return Err(NumericsError::DimensionMismatch {
                expected: self.rows,
                got: v.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            if vr != 0.0 {
                axpy(vr, self.row(r), &mut out);
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, NumericsError> {
        if self.cols != other.rows {
            return Err(NumericsError::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a != 0.0 {
                    axpy(a, other.row(k), dst);
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Whether the off-diagonal entries agree within `rel_tol` of the largest entry.
    pub fn check_symmetric(&self, rel_tol: f64) -> Result<(), NumericsError> {
        if !self.is_square() {
            return Err(NumericsError::DimensionMismatch {
                expected: self.rows,
                got: self.cols,
            });
        }
        let tol = rel_tol * self.max_abs().max(f64::MIN_POSITIVE);
        for r in 0..self.rows {
            for c in (r + 1)..self.cols {
                if (self.get(r, c) - self.get(c, r)).abs() > tol {
                    return Err(NumericsError::NotSymmetric { row: r, col: c });
                }
            }
        }
        Ok(())
    }

    pub fn is_diagonal(&self) -> bool {
        self.is_square()
            && (0..self.rows).all(|r| (0..self.cols).all(|c| r == c || self.get(r, c) == 0.0))
    }
}

/// Lower-triangular factor `L` with `L·Lᵀ = A`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    lower: Matrix,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.lower.rows
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn reconstruct(&self) -> Matrix {
        self.lower
            .matmul(&self.lower.transpose())
            .expect("square factor")
    }

    /// Solves `A x = b` using both triangular sweeps.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, NumericsError> {
        let y = solve_triangular(self, b, false)?;
        solve_triangular(self, &y, true)
    }

    /// Diagonal entries of `A⁻¹`.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        let n = self.dim();
        let mut e = vec![0.0; n];
        (0..n)
            .map(|i| {
                e.iter_mut().for_each(|v| *v = 0.0);
                e[i] = 1.0;
                let x = self.solve(&e).expect("dimension matches");
                x[i]
            })
            .collect()
    }
}

/// Cholesky factorization of a symmetric positive-definite matrix.
///
/// Pivots at or below `n · ε · max|diag|` are rejected as not positive definite.
pub fn cholesky(m: &Matrix) -> Result<CholeskyFactor, NumericsError> {
    if m.rows == 0 || m.cols == 0 {
        return Err(NumericsError::Empty);
    }
    m.check_symmetric(1e-12)?;
    let n = m.rows;
    let max_diag = (0..n).fold(0.0_f64, |acc, i| acc.max(m.get(i, i).abs()));
    let threshold = n as f64 * f64::EPSILON * max_diag;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let pivot = m.get(j, j) - dot(&l.row(j)[..j], &l.row(j)[..j]);
        if !(pivot > threshold) {
            return Err(NumericsError::NotPositiveDefinite { index: j, pivot });
        }
        let d = pivot.sqrt();
        l.set(j, j, d);
        for i in (j + 1)..n {
            let s = m.get(i, j) - dot(&l.row(i)[..j], &l.row(j)[..j]);
            l.set(i, j, s / d);
        }
    }
    Ok(CholeskyFactor { lower: l })
}

/// Solves `L y = b`, or `Lᵀ y = b` when `transpose` is set.
pub fn solve_triangular(
    factor: &CholeskyFactor,
    b: &[f64],
    transpose: bool,
) -> Result<Vec<f64>, NumericsError> {
    let n = factor.dim();
    if b.len() != n {
        return Err(NumericsError::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let l = &factor.lower;
    let mut y = b.to_vec();
    if transpose {
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l.get(k, i) * y[k];
            }
            y[i] = s / l.get(i, i);
        }
    } else {
        for i in 0..n {
            let s = y[i] - dot(&l.row(i)[..i], &y[..i]);
            y[i] = s / l.get(i, i);
        }
    }
    Ok(y)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Givens rotation `(c, s)` zeroing `b` in the pair `(a, b)`; returns the new `a`.
#[inline]
pub fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    if b == 0.0 {
        return (1.0, 0.0, a);
    }
    let r = a.hypot(b);
    (a / r, b / r, r)
}

/// Applies `[c s; -s c]` to the pair of vectors `(x, y)` in place.
#[inline]
pub fn apply_givens(c: f64, s: f64, x: &mut [f64], y: &mut [f64]) {
    for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
        let a = *xi;
        let b = *yi;
        *xi = c * a + s * b;
        *yi = -s * a + c * b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn cholesky_identity() {
        let f = cholesky(&Matrix::identity(3)).unwrap();
        assert_eq!(f.lower(), &Matrix::identity(3));
    }

    #[test]
    fn cholesky_two_by_two_by_hand() {
        let m = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let f = cholesky(&m).unwrap();
        assert_relative_eq!(f.lower().get(0, 0), 2.0);
        assert_relative_eq!(f.lower().get(0, 1), 0.0);
        assert_relative_eq!(f.lower().get(1, 0), 1.0);
        assert_relative_eq!(f.lower().get(1, 1), 2.0_f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn cholesky_rank_deficient() {
        let m = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(
            cholesky(&m),
            Err(NumericsError::NotPositiveDefinite { index: 1, .. })
        ));
    }

    #[test]
    fn cholesky_rejects_asymmetric() {
        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![0.0, 2.0]]).unwrap();
        assert!(matches!(
            cholesky(&m),
            Err(NumericsError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            Matrix::from_row_major(1, 2, vec![1.0, f64::NAN]),
            Err(NumericsError::NonFinite { row: 0, col: 1 })
        ));
    }

    #[test]
    fn triangular_identity() {
        let f = cholesky(&Matrix::identity(2)).unwrap();
        assert_eq!(
            solve_triangular(&f, &[1.0, 2.0], false).unwrap(),
            vec![1.0, 2.0]
        );
    }

    #[test]
    fn triangular_forward_by_hand() {
        // L = [[2,0],[1,1]] is the factor of [[4,2],[2,2]]
        let m = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 2.0]]).unwrap();
        let f = cholesky(&m).unwrap();
        let y = solve_triangular(&f, &[2.0, 2.0], false).unwrap();
        assert_relative_eq!(y[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(y[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn triangular_shape_error() {
        let f = cholesky(&Matrix::identity(2)).unwrap();
        assert_eq!(
            solve_triangular(&f, &[1.0, 2.0, 3.0], true),
            Err(NumericsError::DimensionMismatch {
                expected: 2,
                got: 3
            })
        );
    }

    fn spd_from(n: usize, entries: &[f64]) -> Matrix {
        let m = Matrix::from_row_major(n, n, entries[..n * n].to_vec()).unwrap();
        let mut a = m.transpose().matmul(&m).unwrap();
        for i in 0..n {
            let v = a.get(i, i) + n as f64;
            a.set(i, i, v);
        }
        a
    }

    proptest! {
        #[test]
        fn cholesky_round_trip(n in 1usize..8, entries in prop::collection::vec(-3.0f64..3.0, 64)) {
            let a = spd_from(n, &entries);
            let f = cholesky(&a).unwrap();
            let back = f.reconstruct();
            let mut diff = 0.0;
            for r in 0..n { for c in 0..n { diff += (back.get(r, c) - a.get(r, c)).powi(2); } }
            prop_assert!(diff.sqrt() <= 1e-9 * a.frobenius_norm());
            prop_assert!((0..n).all(|i| f.lower().get(i, i) > 0.0));
        }

        #[test]
        fn solve_recovers_rhs(n in 1usize..8, entries in prop::collection::vec(-3.0f64..3.0, 64),
                              b in prop::collection::vec(-10.0f64..10.0, 8)) {
            let a = spd_from(n, &entries);
            let f = cholesky(&a).unwrap();
            let x = f.solve(&b[..n]).unwrap();
            let back = a.mul_vec(&x).unwrap();
            let err: f64 = back.iter().zip(&b[..n]).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            prop_assert!(err <= 1e-9 * norm2(&b[..n]).max(1.0));
        }
    }
}
