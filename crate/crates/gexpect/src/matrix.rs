//! Dense `n × d` volatility matrices and the Frobenius norm.
//!
//! The second argument of a driver `g(t, y, z)` lives in `R^{n×d}`: one row
//! per solution component, one column per Brownian coordinate. All norms on
//! `z` in this crate are Frobenius norms, matching the Lipschitz and growth
//! conditions the drivers are measured against.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense real matrix with `rows × cols` entries in row-major order.
///
/// Scalar problems (`n = d = 1`) are the common case; [`MatrixZ::scalar`]
/// builds a `1 × 1` matrix directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixZ {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl MatrixZ {
    /// Builds a matrix from row-major entries.
    ///
    /// Fails if the entry count does not equal `rows * cols`, if either
    /// dimension is zero, or if any entry is non-finite.
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if entries.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                entries.len()
            )));
        }
        if let Some(bad) = entries.iter().find(|e| !e.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "matrix entries must be finite, found {bad}"
            )));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    /// The `1 × 1` matrix holding a single scalar.
    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            entries: vec![value],
        }
    }

    /// The zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Row-major view of all entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Borrow row `i` as a slice of length `cols`.
    ///
    /// # Panics
    /// Panics if `i >= rows`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    /// Row `i` as an owned `1 × d` matrix.
    pub fn row_matrix(&self, i: usize) -> MatrixZ {
        MatrixZ {
            rows: 1,
            cols: self.cols,
            entries: self.row(i).to_vec(),
        }
    }

    /// Frobenius norm `(Σ_ij z_ij^2)^{1/2}`.
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    /// True when every entry is exactly zero.
    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|e| *e == 0.0)
    }

    /// Entrywise scaling `k · z`.
    pub fn scale(&self, k: f64) -> MatrixZ {
        MatrixZ {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|e| k * e).collect(),
        }
    }

    /// Entrywise sum; shapes must match.
    pub fn add(&self, other: &MatrixZ) -> Result<MatrixZ> {
        self.zip_with(other, |a, b| a + b)
    }

    /// Entrywise difference; shapes must match.
    pub fn sub(&self, other: &MatrixZ) -> Result<MatrixZ> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Matrix-vector product `z · w` for a `d`-vector `w`, returning an
    /// `n`-vector. This is how a volatility matrix acts on a Brownian
    /// increment.
    pub fn apply(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.cols {
            return Err(Error::InvalidArgument(format!(
                "expected a vector of length {}, got {}",
                self.cols,
                w.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(w).map(|(a, b)| a * b).sum())
            .collect())
    }

    fn zip_with(&self, other: &MatrixZ, f: impl Fn(f64, f64) -> f64) -> Result<MatrixZ> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::InvalidArgument(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(MatrixZ {
            rows: self.rows,
            cols: self.cols,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_is_frobenius() {
        let z = MatrixZ::new(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        assert_eq!(z.norm(), 25.0_f64.sqrt());
    }

    #[test]
    fn scalar_norm_is_absolute_value() {
        assert_eq!(MatrixZ::scalar(-3.0).norm(), 3.0);
    }

    #[test]
    fn zero_matrix_has_zero_norm() {
        let z = MatrixZ::zeros(3, 2);
        assert_eq!(z.norm(), 0.0);
        assert!(z.is_zero());
    }

    #[test]
    fn rejects_non_finite_entries() {
        assert!(MatrixZ::new(1, 1, vec![f64::NAN]).is_err());
        assert!(MatrixZ::new(1, 2, vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn rejects_shape_mismatch() {
        assert!(MatrixZ::new(2, 2, vec![1.0, 2.0]).is_err());
        let a = MatrixZ::zeros(1, 2);
        let b = MatrixZ::zeros(2, 1);
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn apply_contracts_columns() {
        let z = MatrixZ::new(2, 2, vec![1.0, 0.0, 0.5, 2.0]).unwrap();
        let out = z.apply(&[3.0, -1.0]).unwrap();
        assert_eq!(out, vec![3.0, -0.5]);
    }
}
