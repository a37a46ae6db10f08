//! Terminal values of the form `ξ = y + z (B_v - B_u)`.
//!
//! This family — constants plus a matrix times one Brownian increment — is
//! rich enough to separate nonlinear expectations (two operators agreeing on
//! it already share a driver) yet small enough that conditional values have
//! a closed form. A terminal carries an explicit radius bound `k ≥ ‖z‖`, the
//! radius of the class it is sampled from, since several inequalities are
//! quantified over that radius rather than the realized norm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::MatrixZ;

/// `ξ = y + z (B_v - B_u)` with `0 ≤ u ≤ v` and `‖z‖ ≤ bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RTerminal {
    y: Vec<f64>,
    z: MatrixZ,
    u: f64,
    v: f64,
    bound: f64,
}

impl RTerminal {
    /// Builds a terminal value; the radius bound defaults to `‖z‖`.
    pub fn new(y: Vec<f64>, z: MatrixZ, u: f64, v: f64) -> Result<Self> {
        let bound = z.norm();
        Self::with_bound(y, z, u, v, bound)
    }

    /// Builds a terminal value declaring membership in the radius-`bound`
    /// class; requires `‖z‖ ≤ bound`.
    pub fn with_bound(y: Vec<f64>, z: MatrixZ, u: f64, v: f64, bound: f64) -> Result<Self> {
        if y.len() != z.rows() {
            return Err(Error::InvalidArgument(format!(
                "y has length {} but z has {} rows",
                y.len(),
                z.rows()
            )));
        }
        if y.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("y must be finite".into()));
        }
        if !(u.is_finite() && v.is_finite() && 0.0 <= u && u <= v) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= u <= v, got u={u}, v={v}"
            )));
        }
        if !(bound.is_finite() && bound >= 0.0) || z.norm() > bound * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "‖z‖ = {} exceeds the declared radius {bound}",
                z.norm()
            )));
        }
        Ok(Self { y, z, u, v, bound })
    }

    /// Scalar terminal `y + z (B_v - B_u)` with `n = d = 1`.
    pub fn scalar(y: f64, z: f64, u: f64, v: f64) -> Result<Self> {
        Self::new(vec![y], MatrixZ::scalar(z), u, v)
    }

    /// The constant terminal `ξ ≡ y` (no stochastic part).
    pub fn constant(y: Vec<f64>, d: usize) -> Result<Self> {
        let n = y.len();
        Self::new(y, MatrixZ::zeros(n, d), 0.0, 0.0)
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn z(&self) -> &MatrixZ {
        &self.z
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    /// Declared radius of the class this terminal belongs to.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.z.cols()
    }

    /// True when the stochastic part vanishes (`z = 0` or `u = v`).
    pub fn is_constant(&self) -> bool {
        self.z.is_zero() || self.u == self.v
    }

    /// The scaled terminal `k ξ = k y + (k z)(B_v - B_u)`.
    pub fn scale(&self, k: f64) -> Result<RTerminal> {
        RTerminal::new(
            self.y.iter().map(|c| k * c).collect(),
            self.z.scale(k),
            self.u,
            self.v,
        )
    }

    /// The shifted terminal `ξ + c` for a constant vector `c`.
    pub fn translate(&self, c: &[f64]) -> Result<RTerminal> {
        if c.len() != self.y.len() {
            return Err(Error::InvalidArgument(format!(
                "translation has length {}, terminal has {}",
                c.len(),
                self.y.len()
            )));
        }
        RTerminal::with_bound(
            self.y.iter().zip(c).map(|(a, b)| a + b).collect(),
            self.z.clone(),
            self.u,
            self.v,
            self.bound,
        )
    }

    /// The sum `ξ + η`, defined when both terminals share the increment
    /// window `(u, v)`.
    pub fn add(&self, other: &RTerminal) -> Result<RTerminal> {
        if self.u != other.u || self.v != other.v {
            return Err(Error::InvalidArgument(format!(
                "terminals live on different windows: [{}, {}] vs [{}, {}]",
                self.u, self.v, other.u, other.v
            )));
        }
        RTerminal::new(
            self.y.iter().zip(&other.y).map(|(a, b)| a + b).collect(),
            self.z.add(&other.z)?,
            self.u,
            self.v,
        )
    }

    /// The difference `ξ - η` on a shared window.
    pub fn sub(&self, other: &RTerminal) -> Result<RTerminal> {
        self.add(&other.scale(-1.0)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_disordered_windows() {
        assert!(RTerminal::scalar(1.0, 1.0, 0.8, 0.2).is_err());
        assert!(RTerminal::scalar(1.0, 1.0, -0.1, 0.2).is_err());
    }

    #[test]
    fn bound_must_cover_the_norm() {
        let z = MatrixZ::scalar(3.0);
        assert!(RTerminal::with_bound(vec![0.0], z.clone(), 0.0, 1.0, 2.0).is_err());
        let xi = RTerminal::with_bound(vec![0.0], z, 0.0, 1.0, 5.0).unwrap();
        assert_eq!(xi.bound(), 5.0);
    }

    #[test]
    fn constant_detection() {
        assert!(RTerminal::scalar(2.0, 0.0, 0.2, 0.8).unwrap().is_constant());
        assert!(RTerminal::scalar(2.0, 3.0, 0.5, 0.5).unwrap().is_constant());
        assert!(!RTerminal::scalar(2.0, 3.0, 0.2, 0.8).unwrap().is_constant());
    }

    #[test]
    fn algebra_preserves_the_window() {
        let xi = RTerminal::scalar(1.0, 2.0, 0.2, 0.8).unwrap();
        let eta = RTerminal::scalar(-0.5, 1.0, 0.2, 0.8).unwrap();
        let sum = xi.add(&eta).unwrap();
        assert_eq!(sum.y(), &[0.5]);
        assert_eq!(sum.z().entries(), &[3.0]);

        let other = RTerminal::scalar(0.0, 1.0, 0.1, 0.8).unwrap();
        assert!(xi.add(&other).is_err());

        let scaled = xi.scale(-2.0).unwrap();
        assert_eq!(scaled.y(), &[-2.0]);
        assert_eq!(scaled.z().norm(), 4.0);
    }
}
