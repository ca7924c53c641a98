//! Dense row-major matrices and the few factorizations the crate needs.
//! Factorizations run in `f64` through nalgebra.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim(cols, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        (0..self.rows).map(|i| crate::scalar::dot(self.row(i), x)).collect()
    }

    /// `Aᵀ y`.
    pub fn t_matvec(&self, y: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for (i, &yi) in y.iter().enumerate() {
            crate::scalar::axpy(yi, self.row(i), &mut out);
        }
        out
    }

    /// `AᵀA`.
    pub fn gram(&self) -> Matrix<T> {
        let mut g = Matrix::zeros(self.cols, self.cols);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..self.cols {
                if r[a] == T::zero() {
                    continue;
                }
                for b in 0..self.cols {
                    g.data[a * self.cols + b] += r[a] * r[b];
                }
            }
        }
        g
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(self.rows, self.cols, self.data.iter().map(|v| v.f64()))
    }
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn sym_eigen_range<T: Scalar>(m: &Matrix<T>) -> (f64, f64) {
    let e = m.to_nalgebra().symmetric_eigen();
    let lo = e.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = e.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Largest and smallest nonzero singular values.
pub fn singular_range<T: Scalar>(m: &Matrix<T>) -> (f64, f64) {
    let sv = m.to_nalgebra().singular_values();
    let hi = sv.iter().cloned().fold(0.0, f64::max);
    let tol = hi * 1e-12 * (m.rows.max(m.cols) as f64);
    let lo = sv.iter().cloned().filter(|&s| s > tol).fold(f64::INFINITY, f64::min);
    (hi, lo)
}

/// Solves `H x = g` for symmetric positive definite `H`.
pub fn solve_spd<T: Scalar>(h: &Matrix<T>, g: &[T]) -> Result<Vec<T>> {
    check_dim(h.rows, g.len())?;
    let chol = h
        .to_nalgebra()
        .cholesky()
        .ok_or_else(|| Error::NonConvergence("matrix not positive definite".into()))?;
    let rhs = DVector::from_iterator(g.len(), g.iter().map(|v| v.f64()));
    Ok(chol.solve(&rhs).iter().map(|&v| T::lit(v)).collect())
}

/// Solves `H X = B` for symmetric positive definite `H`, one factorization
/// for all right-hand sides.
pub fn solve_spd_many(h: &Matrix<f64>, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    for b in rhs {
        check_dim(h.rows, b.len())?;
    }
    let chol = h
        .to_nalgebra()
        .cholesky()
        .ok_or_else(|| Error::NonConvergence("matrix not positive definite".into()))?;
    let b = DMatrix::from_fn(h.rows, rhs.len(), |i, j| rhs[j][i]);
    let x = chol.solve(&b);
    Ok((0..rhs.len()).map(|j| x.column(j).iter().copied().collect()).collect())
}

/// Solves a general square system by LU.
pub fn solve<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Result<Vec<T>> {
    check_dim(a.rows, b.len())?;
    let rhs = DVector::from_iterator(b.len(), b.iter().map(|v| v.f64()));
    let x = a
        .to_nalgebra()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NonConvergence("singular system".into()))?;
    Ok(x.iter().map(|&v| T::lit(v)).collect())
}
