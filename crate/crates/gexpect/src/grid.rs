//! Deterministic time grids on `[0, T]`.
//!
//! Every time-indexed quantity in this crate (paths, ODE solutions,
//! cumulative processes) lives on an explicit strictly increasing grid
//! `0 = t_0 < t_1 < … < t_N = T`. Uniform grids place `t_i = T · (i / N)` so
//! that the final node equals the horizon exactly in floating point; merged
//! and refined grids preserve the original nodes bit-for-bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when matching a time against a grid node.
/// Scaled by `max(1, T)`; times further away are reported as off-grid.
pub const NODE_MATCH_TOL: f64 = 1e-12;

/// A strictly increasing partition of `[0, T]` starting at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
}

/// Uniform grid with `steps` intervals on `[0, horizon]`.
///
/// Nodes are computed as `horizon * (i / steps)`, which makes the first node
/// exactly `0.0` and the last exactly `horizon`.
pub fn make_uniform_grid(horizon: f64, steps: usize) -> Result<TimeGrid> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument(
            "a grid needs at least one step".into(),
        ));
    }
    let n = steps as f64;
    let points = (0..=steps).map(|i| horizon * (i as f64 / n)).collect();
    TimeGrid::from_points(points)
}

impl TimeGrid {
    /// Builds a grid from explicit nodes, validating that they start at `0`,
    /// are finite and strictly increasing, and contain at least two points.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument(
                "a grid needs at least two nodes".into(),
            ));
        }
        if points[0] != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "grids start at 0, got first node {}",
                points[0]
            )));
        }
        for w in points.windows(2) {
            if !w[1].is_finite() || w[1] <= w[0] {
                return Err(Error::InvalidArgument(format!(
                    "grid nodes must be finite and strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { points })
    }

    /// All nodes, in order.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// The terminal time `T`.
    pub fn horizon(&self) -> f64 {
        *self.points.last().unwrap()
    }

    /// Number of intervals `N` (one less than the node count).
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    /// Node `t_i`.
    ///
    /// # Panics
    /// Panics if `i` is out of range.
    pub fn node(&self, i: usize) -> f64 {
        self.points[i]
    }

    /// Interval length `t_{i+1} - t_i`.
    ///
    /// # Panics
    /// Panics if `i >= steps()`.
    pub fn dt(&self, i: usize) -> f64 {
        self.points[i + 1] - self.points[i]
    }

    /// Index of the node matching `t` within [`NODE_MATCH_TOL`]` · max(1, T)`,
    /// or `None` when `t` falls between nodes.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = NODE_MATCH_TOL * self.horizon().max(1.0);
        let i = self.nearest_index(t);
        ((self.points[i] - t).abs() <= tol).then_some(i)
    }

    /// Like [`TimeGrid::index_of`] but reports the distance to the nearest
    /// node in the error, for callers that require on-grid times.
    pub fn require_node(&self, t: f64) -> Result<usize> {
        self.index_of(t).ok_or_else(|| {
            let nearest = self.points[self.nearest_index(t)];
            Error::OffGridTime {
                t,
                nearest,
                distance: (nearest - t).abs(),
            }
        })
    }

    /// Index of the node closest to `t` (ties resolve to the left node).
    pub fn nearest_index(&self, t: f64) -> usize {
        match self.points.binary_search_by(|p| p.partial_cmp(&t).unwrap()) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i == self.points.len() => self.points.len() - 1,
            Err(i) => {
                if (t - self.points[i - 1]) <= (self.points[i] - t) {
                    i - 1
                } else {
                    i
                }
            }
        }
    }

    /// Merges extra breakpoints into the grid. Times that already match a
    /// node (within the node tolerance) are dropped rather than duplicated;
    /// times outside `(0, T)` are ignored.
    pub fn with_breakpoints(&self, extra: &[f64]) -> Result<TimeGrid> {
        let tol = NODE_MATCH_TOL * self.horizon().max(1.0);
        let mut points = self.points.clone();
        for &t in extra {
            if !t.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "breakpoints must be finite, got {t}"
                )));
            }
            if t <= 0.0 || t >= self.horizon() {
                continue;
            }
            if self.index_of(t).is_none() && points.iter().all(|p| (p - t).abs() > tol) {
                points.push(t);
            }
        }
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        TimeGrid::from_points(points)
    }

    /// Subdivides every interval into `factor` equal parts, keeping the
    /// original nodes exactly.
    pub fn refine(&self, factor: usize) -> TimeGrid {
        assert!(factor >= 1, "refinement factor must be at least 1");
        let mut points = Vec::with_capacity(self.steps() * factor + 1);
        for i in 0..self.steps() {
            let (a, b) = (self.points[i], self.points[i + 1]);
            points.push(a);
            for j in 1..factor {
                points.push(a + (b - a) * (j as f64 / factor as f64));
            }
        }
        points.push(self.horizon());
        TimeGrid { points }
    }

    /// The sub-grid covering `[t_lo, t_hi]` where both endpoints are nodes.
    /// Returned times are shifted so the window starts at zero.
    pub fn window(&self, lo: usize, hi: usize) -> Result<TimeGrid> {
        if lo >= hi || hi >= self.points.len() {
            return Err(Error::InvalidArgument(format!(
                "invalid window [{lo}, {hi}] for a grid with {} nodes",
                self.points.len()
            )));
        }
        let t0 = self.points[lo];
        TimeGrid::from_points(self.points[lo..=hi].iter().map(|t| t - t0).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_quarters() {
        let g = make_uniform_grid(1.0, 4).unwrap();
        assert_eq!(g.points(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn single_step_grid() {
        let g = make_uniform_grid(1.0, 1).unwrap();
        assert_eq!(g.points(), &[0.0, 1.0]);
    }

    #[test]
    fn last_node_is_exactly_the_horizon() {
        // 0.5 / 5 = 0.1 is not representable; the endpoint must still be 0.5.
        let g = make_uniform_grid(0.5, 5).unwrap();
        assert_eq!(g.horizon(), 0.5);
        assert_eq!(*g.points().last().unwrap(), 0.5);
    }

    #[test]
    fn zero_steps_is_invalid() {
        assert!(make_uniform_grid(1.0, 0).is_err());
    }

    #[test]
    fn negative_horizon_is_invalid() {
        assert!(make_uniform_grid(-1.0, 4).is_err());
        assert!(make_uniform_grid(0.0, 4).is_err());
    }

    #[test]
    fn from_points_rejects_disorder() {
        assert!(TimeGrid::from_points(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::from_points(vec![0.1, 0.5, 1.0]).is_err());
        assert!(TimeGrid::from_points(vec![0.0]).is_err());
    }

    #[test]
    fn node_lookup_and_off_grid_report() {
        let g = make_uniform_grid(1.0, 4).unwrap();
        assert_eq!(g.index_of(0.75), Some(3));
        assert_eq!(g.index_of(0.6), None);
        match g.require_node(0.6).unwrap_err() {
            Error::OffGridTime { nearest, .. } => assert_eq!(nearest, 0.5),
            other => panic!("expected OffGridTime, got {other:?}"),
        }
    }

    #[test]
    fn breakpoints_merge_without_duplicates() {
        let g = make_uniform_grid(1.0, 5).unwrap();
        let merged = g.with_breakpoints(&[0.2, 0.33, 0.0, 1.0, 1.5]).unwrap();
        assert_eq!(merged.steps(), 6);
        assert!(merged.index_of(0.33).is_some());
        assert!(merged.index_of(0.2).is_some());
    }

    #[test]
    fn refine_keeps_original_nodes() {
        let g = make_uniform_grid(1.0, 4).unwrap();
        let r = g.refine(4);
        assert_eq!(r.steps(), 16);
        for &p in g.points() {
            assert!(r.index_of(p).is_some());
        }
        assert_eq!(r.horizon(), 1.0);
    }

    #[test]
    fn window_rebases_to_zero() {
        let g = make_uniform_grid(1.0, 4).unwrap();
        let w = g.window(1, 3).unwrap();
        assert_eq!(w.points(), &[0.0, 0.25, 0.5]);
    }
}
