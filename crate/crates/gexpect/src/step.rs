//! Piecewise-constant matrix-valued processes on `[0, T]`.
//!
//! Step processes play two roles: as the prescribed volatility `h` of an
//! explicitly solvable equation (most often an indicator block
//! `z · 1_{[u,v]}`), and as deterministic scalar rates `γ(t)` entering
//! time-dependent drivers. Values are right-continuous: segment `i` owns
//! `[b_i, b_{i+1})`, and the terminal time belongs to the last segment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::MatrixZ;

/// A right-continuous step function with values in `R^{n×d}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepProcess {
    breakpoints: Vec<f64>,
    values: Vec<MatrixZ>,
}

impl StepProcess {
    /// Builds a step process from breakpoints `0 = b_0 < … < b_L = T` and
    /// one value per segment.
    pub fn from_segments(breakpoints: Vec<f64>, values: Vec<MatrixZ>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::InvalidArgument(
                "a step process needs at least two breakpoints".into(),
            ));
        }
        if breakpoints[0] != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "step processes start at 0, got {}",
                breakpoints[0]
            )));
        }
        for w in breakpoints.windows(2) {
            if !w[1].is_finite() || w[1] <= w[0] {
                return Err(Error::InvalidArgument(format!(
                    "breakpoints must be finite and strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if values.len() != breakpoints.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "expected {} segment values, got {}",
                breakpoints.len() - 1,
                values.len()
            )));
        }
        let (n, d) = (values[0].rows(), values[0].cols());
        if values.iter().any(|v| v.rows() != n || v.cols() != d) {
            return Err(Error::InvalidArgument(
                "all segment values must share one shape".into(),
            ));
        }
        Ok(Self {
            breakpoints,
            values,
        })
    }

    /// The process constantly equal to `z` on `[0, horizon]`.
    pub fn constant(z: MatrixZ, horizon: f64) -> Result<Self> {
        Self::from_segments(vec![0.0, horizon], vec![z])
    }

    /// The zero process of shape `n × d`.
    pub fn zero(n: usize, d: usize, horizon: f64) -> Result<Self> {
        Self::constant(MatrixZ::zeros(n, d), horizon)
    }

    /// The indicator block `z · 1_{[u,v]}`: equal to `z` on `[u, v)` and to
    /// zero elsewhere. Degenerate windows (`u = v`) give the zero process.
    pub fn indicator(z: MatrixZ, u: f64, v: f64, horizon: f64) -> Result<Self> {
        if !(0.0 <= u && u <= v && v <= horizon) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= u <= v <= {horizon}, got u={u}, v={v}"
            )));
        }
        let (n, d) = (z.rows(), z.cols());
        if u == v {
            return Self::zero(n, d, horizon);
        }
        let mut breakpoints = vec![0.0];
        let mut values = Vec::new();
        if u > 0.0 {
            breakpoints.push(u);
            values.push(MatrixZ::zeros(n, d));
        }
        breakpoints.push(v);
        values.push(z);
        if v < horizon {
            breakpoints.push(horizon);
            values.push(MatrixZ::zeros(n, d));
        }
        Self::from_segments(breakpoints, values)
    }

    /// Scalar constant process (`1 × 1`), convenient for rates `γ(t)`.
    pub fn scalar_constant(value: f64, horizon: f64) -> Result<Self> {
        Self::constant(MatrixZ::scalar(value), horizon)
    }

    pub fn horizon(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    pub fn rows(&self) -> usize {
        self.values[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.values[0].cols()
    }

    /// All breakpoints including the endpoints `0` and `T`.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Breakpoints strictly inside `(0, T)`, the ones a grid must absorb.
    pub fn interior_breakpoints(&self) -> &[f64] {
        &self.breakpoints[1..self.breakpoints.len() - 1]
    }

    /// Segment values in order.
    pub fn values(&self) -> &[MatrixZ] {
        &self.values
    }

    /// Value at time `t` under the right-continuous convention; the terminal
    /// time maps to the last segment.
    ///
    /// # Panics
    /// Panics if `t` lies outside `[0, T]`.
    pub fn value_at(&self, t: f64) -> &MatrixZ {
        assert!(
            (0.0..=self.horizon()).contains(&t),
            "time {t} outside [0, {}]",
            self.horizon()
        );
        let seg = match self
            .breakpoints
            .binary_search_by(|b| b.partial_cmp(&t).unwrap())
        {
            Ok(i) => i.min(self.values.len() - 1),
            Err(i) => i - 1,
        };
        &self.values[seg]
    }

    /// Value on the open interval `(a, b)`, which must lie inside a single
    /// segment. Used by integrators whose cells never straddle breakpoints.
    pub fn value_on(&self, a: f64, b: f64) -> Result<&MatrixZ> {
        let mid = 0.5 * (a + b);
        let v = self.value_at(mid);
        let seg_end = self
            .breakpoints
            .iter()
            .find(|&&p| p > mid)
            .copied()
            .unwrap_or(self.horizon());
        let seg_start = self
            .breakpoints
            .iter()
            .rev()
            .find(|&&p| p <= mid)
            .copied()
            .unwrap_or(0.0);
        let tol = 1e-12 * self.horizon().max(1.0);
        if a < seg_start - tol || b > seg_end + tol {
            return Err(Error::InvalidArgument(format!(
                "interval [{a}, {b}] straddles a step-process breakpoint"
            )));
        }
        Ok(v)
    }

    /// Exact integral `∫_0^t s(r) dr` of a scalar (`1 × 1`) step process.
    pub fn integrate_scalar_to(&self, t: f64) -> Result<f64> {
        if self.rows() != 1 || self.cols() != 1 {
            return Err(Error::InvalidArgument(
                "scalar integration requires a 1x1 step process".into(),
            ));
        }
        if !(0.0..=self.horizon()).contains(&t) {
            return Err(Error::InvalidArgument(format!(
                "integration endpoint {t} outside [0, {}]",
                self.horizon()
            )));
        }
        let mut total = 0.0;
        for (i, v) in self.values.iter().enumerate() {
            let (a, b) = (self.breakpoints[i], self.breakpoints[i + 1]);
            if t <= a {
                break;
            }
            total += v.entries()[0] * (t.min(b) - a);
        }
        Ok(total)
    }

    /// Largest Frobenius norm over all segments.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indicator_segments_and_values() {
        let z = MatrixZ::scalar(2.0);
        let h = StepProcess::indicator(z.clone(), 0.2, 0.8, 1.0).unwrap();
        assert_eq!(h.breakpoints(), &[0.0, 0.2, 0.8, 1.0]);
        assert!(h.value_at(0.1).is_zero());
        assert_eq!(h.value_at(0.2), &z);
        assert_eq!(h.value_at(0.5), &z);
        assert!(h.value_at(0.8).is_zero());
        assert!(h.value_at(1.0).is_zero());
    }

    #[test]
    fn indicator_touching_the_endpoints() {
        let z = MatrixZ::scalar(1.0);
        let h = StepProcess::indicator(z.clone(), 0.0, 1.0, 1.0).unwrap();
        assert_eq!(h.breakpoints(), &[0.0, 1.0]);
        assert_eq!(h.value_at(1.0), &z);

        let degenerate = StepProcess::indicator(z, 0.3, 0.3, 1.0).unwrap();
        assert!(degenerate.value_at(0.3).is_zero());
    }

    #[test]
    fn terminal_time_belongs_to_last_segment() {
        let h = StepProcess::from_segments(
            vec![0.0, 0.5, 1.0],
            vec![MatrixZ::scalar(1.0), MatrixZ::scalar(3.0)],
        )
        .unwrap();
        assert_eq!(h.value_at(1.0).entries()[0], 3.0);
        assert_eq!(h.value_at(0.5).entries()[0], 3.0);
    }

    #[test]
    fn scalar_integral_is_exact() {
        let gamma = StepProcess::from_segments(
            vec![0.0, 0.25, 1.0],
            vec![MatrixZ::scalar(2.0), MatrixZ::scalar(-1.0)],
        )
        .unwrap();
        assert_eq!(gamma.integrate_scalar_to(1.0).unwrap(), 2.0 * 0.25 - 0.75);
        assert_eq!(gamma.integrate_scalar_to(0.25).unwrap(), 0.5);
        assert_eq!(gamma.integrate_scalar_to(0.0).unwrap(), 0.0);
    }

    #[test]
    fn value_on_rejects_straddling_intervals() {
        let h = StepProcess::indicator(MatrixZ::scalar(1.0), 0.2, 0.8, 1.0).unwrap();
        assert!(h.value_on(0.1, 0.3).is_err());
        assert_eq!(h.value_on(0.3, 0.5).unwrap().entries()[0], 1.0);
    }

    #[test]
    fn rejects_mixed_shapes() {
        let r = StepProcess::from_segments(
            vec![0.0, 0.5, 1.0],
            vec![MatrixZ::scalar(1.0), MatrixZ::zeros(2, 1)],
        );
        assert!(r.is_err());
    }
}
