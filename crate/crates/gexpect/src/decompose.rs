//! Fixed points, supermartingale structure, and drift decomposition.
//!
//! Everything here lives in the deterministic reduction: for terminals of
//! the form `ψ(t) + z B_t` under a deterministic, `y`-independent driver,
//! conditional values differ from `ψ` by plain integrals, so BSDE questions
//! become questions about functions on `[0, T]`.
//!
//! Three instruments share that reduction. [`picard_solve`] iterates the
//! integral map `I(ψ)(t) = y + ∫_t^T g(s, z) ds + ∫_t^T f(s, ψ(s)) ds` to
//! its unique fixed point, measuring the contraction as it goes.
//! [`check_supermartingale`] decides whether `ψ(t) + z B_t` loses value in
//! conditional expectation — a one-dimensional inequality once the noise
//! cancels. [`penalize_decompose`] extracts the compensator of a
//! supermartingale by penalization: solve the linear equation with penalty
//! `m`, read off the accumulated drift excess, and extrapolate the penalty
//! to infinity. [`representation_pair`] reports the driver/volatility pair
//! realizing a single-increment conditional value, with its modulus bound.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::grid::TimeGrid;
use crate::matrix::MatrixZ;
use crate::quad::{self, QUAD_TOL};
use crate::rng::UniformStream;
use crate::terminal::RTerminal;

/// Iteration cap for the Picard loop. The map halves squared weighted
/// distance per application, so hitting this cap means the declared
/// Lipschitz data was wrong, not that the problem is hard.
const MAX_PICARD_ITERATIONS: usize = 200;

// ═══════════════════════════════════════════════════════════════════════
//  The y-coupling term
// ═══════════════════════════════════════════════════════════════════════

type DriverEval = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// The scalar coupling `f(t, ψ)` in the fixed-point map, with its declared
/// Lipschitz constant in `ψ`.
#[derive(Clone)]
pub struct DriverF {
    name: String,
    lambda: f64,
    eval: Arc<DriverEval>,
}

impl fmt::Debug for DriverF {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriverF")
            .field("name", &self.name)
            .field("lambda", &self.lambda)
            .finish()
    }
}

impl DriverF {
    /// `f ≡ 0`: the map is constant in `ψ` and one application lands on
    /// the fixed point.
    pub fn zero() -> Self {
        Self {
            name: "0".into(),
            lambda: 0.0,
            eval: Arc::new(|_, _| 0.0),
        }
    }

    /// `f ≡ c`.
    pub fn constant(c: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "constant coupling must be finite, got {c}"
            )));
        }
        Ok(Self {
            name: format!("{c}"),
            lambda: 0.0,
            eval: Arc::new(move |_, _| c),
        })
    }

    /// `f(t, ψ) = coeff · ψ`.
    pub fn linear(coeff: f64) -> Result<Self> {
        if !coeff.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "linear coupling must be finite, got {coeff}"
            )));
        }
        Ok(Self {
            name: format!("{coeff}·ψ"),
            lambda: coeff.abs(),
            eval: Arc::new(move |_, psi| coeff * psi),
        })
    }

    /// A custom coupling with a declared Lipschitz constant; check the
    /// declaration with [`DriverF::validate`] before trusting it.
    pub fn custom(
        name: impl Into<String>,
        lambda: f64,
        eval: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "Lipschitz constant must be finite and ≥ 0, got {lambda}"
            )));
        }
        Ok(Self {
            name: name.into(),
            lambda,
            eval: Arc::new(eval),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Declared Lipschitz constant in `ψ`.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn eval(&self, t: f64, psi: f64) -> f64 {
        (self.eval)(t, psi)
    }

    /// Spot-checks the declared Lipschitz constant on random pairs and the
    /// finiteness of `f(·, 0)`; a declaration the samples contradict is
    /// reported as a metadata violation with the witness pair.
    pub fn validate(&self, horizon: f64, samples: usize, seed: u64) -> Result<()> {
        let mut u = UniformStream::new(seed);
        for _ in 0..samples {
            let t = u.next_in(0.0, horizon);
            let a = u.next_in(-5.0, 5.0);
            let b = u.next_in(-5.0, 5.0);
            let (fa, fb, f0) = (self.eval(t, a), self.eval(t, b), self.eval(t, 0.0));
            if !fa.is_finite() || !f0.is_finite() {
                return Err(Error::MetadataViolation(format!(
                    "coupling {} produced a non-finite value at t={t}",
                    self.name
                )));
            }
            let bound = self.lambda * (a - b).abs();
            if (fa - fb).abs() > bound + 1e-9 * (1.0 + bound) {
                return Err(Error::MetadataViolation(format!(
                    "coupling {} breaks its declared Lipschitz constant {}: \
                     |f({t:.4},{a:.4}) - f({t:.4},{b:.4})| = {:.6e} > {:.6e}",
                    self.name,
                    self.lambda,
                    (fa - fb).abs(),
                    bound
                )));
            }
        }
        Ok(())
    }
}

// ═══════════════════════════════════════════════════════════════════════
//  Picard iteration
// ═══════════════════════════════════════════════════════════════════════

/// Converged Picard iterate with its convergence history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PicardSolution {
    grid: TimeGrid,
    psi: Vec<f64>,
    iterations: usize,
    weighted_gaps: Vec<f64>,
    ratios: Vec<f64>,
    fixed_point_residual: f64,
}

impl PicardSolution {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Fixed-point values at the grid nodes.
    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    /// Number of applications of the integral map.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Weighted-norm distances between successive iterates.
    pub fn weighted_gaps(&self) -> &[f64] {
        &self.weighted_gaps
    }

    /// Ratios of successive weighted gaps — the empirical contraction
    /// factor, recorded while the gaps are above rounding noise.
    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    /// Sup-norm distance between the returned iterate and one further
    /// application of the map.
    pub fn fixed_point_residual(&self) -> f64 {
        self.fixed_point_residual
    }

    /// Value at a node time.
    pub fn value_at_node(&self, t: f64) -> Result<f64> {
        Ok(self.psi[self.grid.require_node(t)?])
    }
}

/// Solves `ψ = I(ψ)` with `I(ψ)(t) = y + ∫_t^T g(s,z) ds + ∫_t^T f(s,ψ(s)) ds`
/// by Picard iteration from `ψ_0 ≡ 0`.
///
/// The driver integral is computed once, exactly per grid cell; the
/// coupling integral is rebuilt each iteration from node values by a
/// fourth-order cumulative rule stitched at the driver's breakpoints. The
/// loop stops when both the weighted distance (weight
/// `e^{2λ²T²(s−T)}`, the contraction weight normalized to stay below one)
/// and the sup-norm distance scaled by `1 + λT` fall under `tol`, which
/// pins the returned iterate's own fixed-point residual under `tol`.
pub fn picard_solve(
    g: &Generator,
    f: &DriverF,
    y: f64,
    z: &MatrixZ,
    grid: &TimeGrid,
    tol: f64,
) -> Result<PicardSolution> {
    let meta = g.meta();
    if !meta.deterministic || !meta.y_independent {
        return Err(Error::UnsupportedGenerator(format!(
            "{} must be deterministic and y-independent for the deterministic reduction",
            g.name()
        )));
    }
    if g.n() != 1 {
        return Err(Error::InvalidArgument(format!(
            "the fixed-point map is scalar; driver {} has n={}",
            g.name(),
            g.n()
        )));
    }
    if z.rows() != 1 || z.cols() != g.d() {
        return Err(Error::InvalidArgument(format!(
            "volatility must be 1x{}, got {}x{}",
            g.d(),
            z.rows(),
            z.cols()
        )));
    }
    if !(tol > 0.0 && tol.is_finite() && y.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need finite y and tol > 0, got y={y}, tol={tol}"
        )));
    }

    let work = grid.with_breakpoints(g.time_breakpoints())?;
    let ts = work.points().to_vec();
    let horizon = work.horizon();
    let n_nodes = ts.len();

    // Driver part: suffix sums of exact per-cell integrals of s ↦ g(s, z).
    g.eval(0.0, &[0.0], z)?;
    let mut drift_tail = vec![0.0; n_nodes];
    for i in (0..n_nodes - 1).rev() {
        let cell = quad::integrate(
            &|s| {
                g.eval(s, &[0.0], z)
                    .expect("driver evaluation checked above")[0]
            },
            ts[i],
            ts[i + 1],
            g.time_breakpoints(),
            QUAD_TOL,
        )?;
        drift_tail[i] = drift_tail[i + 1] + cell;
    }

    let break_idx: Vec<usize> = g
        .time_breakpoints()
        .iter()
        .filter_map(|&b| work.index_of(b))
        .collect();
    let lambda = f.lambda();
    let weight_rate = 2.0 * lambda * lambda * horizon * horizon;
    let weighted_gap = |delta: &[f64]| -> f64 {
        // Trapezoid of δ(s)² e^{2λ²T²(s-T)} over node values; the weight is
        // the contraction weight shifted to peak at 1 so large λT cannot
        // overflow. Stopping only needs a stable norm, not quadrature-grade
        // accuracy.
        let mut acc = 0.0;
        for i in 0..n_nodes - 1 {
            let wa = (weight_rate * (ts[i] - horizon)).exp() * delta[i] * delta[i];
            let wb = (weight_rate * (ts[i + 1] - horizon)).exp() * delta[i + 1] * delta[i + 1];
            acc += 0.5 * (ts[i + 1] - ts[i]) * (wa + wb);
        }
        acc.sqrt()
    };

    let apply = |psi: &[f64]| -> Vec<f64> {
        let fs: Vec<f64> = ts.iter().zip(psi).map(|(&t, &p)| f.eval(t, p)).collect();
        let cum = stitched_cumulative(&ts, &fs, &break_idx);
        let total = cum[n_nodes - 1];
        (0..n_nodes)
            .map(|i| y + drift_tail[i] + (total - cum[i]))
            .collect()
    };

    let mut psi = vec![0.0; n_nodes];
    let mut weighted_gaps = Vec::new();
    let mut ratios = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let sup_target = tol / (1.0 + lambda * horizon);
    for _ in 0..MAX_PICARD_ITERATIONS {
        let next = apply(&psi);
        iterations += 1;
        let delta: Vec<f64> = next.iter().zip(&psi).map(|(a, b)| a - b).collect();
        let sup = delta.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
        let gap = weighted_gap(&delta);
        let scale = next.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        if let Some(&prev) = weighted_gaps.last() {
            if prev > 1e3 * f64::EPSILON * scale {
                ratios.push(gap / prev);
            }
        }
        weighted_gaps.push(gap);
        psi = next;
        if gap <= tol && sup <= sup_target {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::ContractionFailure(format!(
            "no fixed point within {MAX_PICARD_ITERATIONS} iterations (last weighted gap \
             {:.3e}, λ = {lambda}); the declared Lipschitz data is suspect",
            weighted_gaps.last().copied().unwrap_or(f64::NAN)
        )));
    }

    let once_more = apply(&psi);
    let fixed_point_residual = once_more
        .iter()
        .zip(&psi)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));

    Ok(PicardSolution {
        grid: work,
        psi,
        iterations,
        weighted_gaps,
        ratios,
        fixed_point_residual,
    })
}

/// Fourth-order cumulative integral of node values, restarted at the given
/// node indices so that stencils never straddle a breakpoint.
fn stitched_cumulative(ts: &[f64], fs: &[f64], break_idx: &[usize]) -> Vec<f64> {
    let mut cuts: Vec<usize> = std::iter::once(0)
        .chain(break_idx.iter().copied())
        .chain(std::iter::once(ts.len() - 1))
        .collect();
    cuts.sort_unstable();
    cuts.dedup();
    let mut out = vec![0.0; ts.len()];
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let seg = quad::cumulative_integral(&ts[lo..=hi], &fs[lo..=hi]);
        let base = out[lo];
        for (k, v) in seg.into_iter().enumerate() {
            out[lo + k] = base + v;
        }
    }
    out
}

// ═══════════════════════════════════════════════════════════════════════
//  Supermartingale audit
// ═══════════════════════════════════════════════════════════════════════

/// The most violated pair of a failed supermartingale check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupermartingaleWitness {
    pub s: f64,
    pub t: f64,
    /// Conditional value of the later state seen from `s`.
    pub conditional: f64,
    /// The value at `s` it should not exceed.
    pub current: f64,
    pub violation: f64,
}

/// Verdict of the supermartingale inequality over all grid pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupermartingaleReport {
    pub pass: bool,
    pub max_violation: f64,
    pub slack: f64,
    pub witness: Option<SupermartingaleWitness>,
}

/// Checks that `ψ(t) + z B_t` is a supermartingale under the driver: for
/// every grid pair `s ≤ t` the noise cancels and the condition reads
/// `ψ(t) + ∫_s^t g(r, z) dr ≤ ψ(s)`.
///
/// Equivalently `w(t) = ψ(t) + ∫_0^t g(r, z) dr` must be nonincreasing, so
/// all pairs are checked in one sweep and the witness returned is the pair
/// with the largest violation — the most informative counterexample, and
/// the widest pair when violations grow with the window.
pub fn check_supermartingale(
    g: &Generator,
    psi: &[f64],
    z: &MatrixZ,
    grid: &TimeGrid,
) -> Result<SupermartingaleReport> {
    require_deterministic_scalar(g)?;
    if psi.len() != grid.points().len() {
        return Err(Error::InvalidArgument(format!(
            "ψ has {} samples for a grid of {} nodes",
            psi.len(),
            grid.points().len()
        )));
    }
    if psi.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("ψ samples must be finite".into()));
    }
    g.eval(0.0, &[0.0], z)?;

    let pts = grid.points();
    let mut w = vec![0.0; pts.len()];
    let mut cum = 0.0;
    for i in 0..pts.len() {
        if i > 0 {
            cum += quad::integrate(
                &|s| {
                    g.eval(s, &[0.0], z)
                        .expect("driver evaluation checked above")[0]
                },
                pts[i - 1],
                pts[i],
                g.time_breakpoints(),
                QUAD_TOL,
            )?;
        }
        w[i] = psi[i] + cum;
    }

    let scale = w.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let slack = 1e-10 * scale;
    let mut best: Option<(usize, usize, f64)> = None;
    let mut min_idx = 0;
    for j in 1..pts.len() {
        if w[j - 1] < w[min_idx] {
            min_idx = j - 1;
        }
        let violation = w[j] - w[min_idx];
        if violation > best.map_or(0.0, |b| b.2) {
            best = Some((min_idx, j, violation));
        }
    }
    let max_violation = best.map_or(0.0, |b| b.2);
    let witness = best
        .filter(|b| b.2 > slack)
        .map(|(i, j, violation)| SupermartingaleWitness {
            s: pts[i],
            t: pts[j],
            conditional: w[j] - (w[i] - psi[i]),
            current: psi[i],
            violation,
        });
    Ok(SupermartingaleReport {
        pass: witness.is_none(),
        max_violation,
        slack,
        witness,
    })
}

// ═══════════════════════════════════════════════════════════════════════
//  Penalization decomposition
// ═══════════════════════════════════════════════════════════════════════

/// One penalized solve: `ψ^m` and its accumulated drift excess on the grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PenalizedPath {
    pub m: f64,
    pub psi_m: Vec<f64>,
    pub a_m: Vec<f64>,
}

/// Outcome of the penalization decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionResult {
    grid: TimeGrid,
    /// Extrapolated compensator on the grid; nondecreasing with `a[0] = 0`.
    a: Vec<f64>,
    /// Every penalized solve performed, in schedule order.
    psi_m_history: Vec<PenalizedPath>,
    converged: bool,
    /// Sup-distance between the last two penalized compensators.
    final_gap: f64,
    /// Sup-distances between consecutive schedule entries.
    gaps: Vec<f64>,
    /// Nodes at which `ψ ≥ ψ^m` or `ψ^{m'} ≥ ψ^m` failed beyond slack.
    monotonicity_violations: usize,
    /// Sup-norm defect of `ψ(t) = ψ(T) + ∫_t^T g ds + a(T) − a(t)`.
    reconstruction_error: f64,
}

impl DecompositionResult {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn psi_m_history(&self) -> &[PenalizedPath] {
        &self.psi_m_history
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn final_gap(&self) -> f64 {
        self.final_gap
    }

    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    pub fn monotonicity_violations(&self) -> usize {
        self.monotonicity_violations
    }

    pub fn reconstruction_error(&self) -> f64 {
        self.reconstruction_error
    }
}

/// The default penalty schedule: doubling from 1 to 2^20.
pub fn default_m_schedule() -> Vec<f64> {
    (0..=20).map(|k| f64::from(1u32 << k)).collect()
}

/// Solves the penalized equation
/// `ψ^m(t) = ψ(T) + ∫_t^T g(s,z) ds + m ∫_t^T (ψ(s) − ψ^m(s)) ds`
/// exactly per grid cell and returns `ψ^m` with its drift excess
/// `a^m(t) = ∫_0^t m (ψ(s) − ψ^m(s)) ds`.
///
/// The gap `δ = ψ − ψ^m` obeys `δ' = q + m δ` backward from `δ(T) = 0`
/// with `q = ψ' + g(·, z)`. Each cell is integrated with the factor
/// `e^{-m·}` in closed form — stable at any penalty, where explicit
/// stepping would need steps below `1/m` — and the excess increment uses
/// the identity `∫ m δ = Δδ − ∫ q`, which is exact for the same cell
/// model. `q` is fitted linearly through the cell's third points, exact
/// whenever the driver is piecewise linear between grid nodes.
pub fn penalized_path(
    g: &Generator,
    psi: &[f64],
    z: &MatrixZ,
    grid: &TimeGrid,
    m: f64,
) -> Result<PenalizedPath> {
    require_deterministic_scalar(g)?;
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "penalty must be positive, got {m}"
        )));
    }
    if psi.len() != grid.points().len() {
        return Err(Error::InvalidArgument(format!(
            "ψ has {} samples for a grid of {} nodes",
            psi.len(),
            grid.points().len()
        )));
    }
    g.eval(0.0, &[0.0], z)?;

    let work = grid.with_breakpoints(g.time_breakpoints())?;
    let ts = work.points();
    let n = ts.len();
    let psi_w = interp_to(grid, psi, &work);

    let mut delta = vec![0.0; n];
    let mut cell_excess = vec![0.0; n - 1];
    let g_at = |s: f64| {
        g.eval(s, &[0.0], z)
            .expect("driver evaluation checked above")[0]
    };
    for i in (0..n - 1).rev() {
        let (lo, hi) = (ts[i], ts[i + 1]);
        let h = hi - lo;
        let slope = (psi_w[i + 1] - psi_w[i]) / h;
        // Sample q = ψ' + g at the inner third points: within the cell the
        // driver is smooth (breakpoints are nodes), and interior samples
        // dodge the ambiguity of evaluating a step driver at its jump.
        let (s1, s2) = (lo + h / 3.0, hi - h / 3.0);
        let (q1, q2) = (slope + g_at(s1), slope + g_at(s2));
        let beta = (q2 - q1) / (s2 - s1);
        let alpha = q1 - beta * (s1 - lo);
        let e1 = h * quad::em1_over(m * h);
        let e2 = h * h * quad::poisson2(m * h);
        delta[i] = (-m * h).exp() * delta[i + 1] - (alpha * e1 + beta * e2);
        cell_excess[i] = delta[i + 1] - delta[i] - (alpha * h + beta * h * h / 2.0);
    }
    let mut acc = 0.0;
    let a_m: Vec<f64> = std::iter::once(0.0)
        .chain(cell_excess.iter().map(|inc| {
            acc += inc;
            acc
        }))
        .collect();
    let psi_m = psi_w.iter().zip(&delta).map(|(p, d)| p - d).collect();
    Ok(PenalizedPath { m, psi_m, a_m })
}

/// Runs the penalty schedule until successive drift excesses agree in
/// sup-norm, then extrapolates the `O(1/m)` tail away and enforces the
/// structural facts of a compensator: `a(0) = 0` and monotonicity.
///
/// Preconditions: the supermartingale check must pass, and the schedule
/// must be increasing. Each penalized solve is independent of the others
/// (they could run in parallel; the schedule is walked in order because
/// adjacent pairs decide stopping). Failure to meet `tol` before the
/// schedule ends reports the last gap rather than pretending convergence.
pub fn penalize_decompose(
    g: &Generator,
    psi: &[f64],
    z: &MatrixZ,
    grid: &TimeGrid,
    m_schedule: &[f64],
    tol: f64,
) -> Result<DecompositionResult> {
    let super_report = check_supermartingale(g, psi, z, grid)?;
    if !super_report.pass {
        let w = super_report
            .witness
            .as_ref()
            .expect("failed check carries a witness");
        return Err(Error::PreconditionViolation(format!(
            "ψ(t) + zB_t is not a supermartingale: violation {:.3e} at (s, t) = ({}, {})",
            w.violation, w.s, w.t
        )));
    }
    if m_schedule.len() < 2 || m_schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "penalty schedule needs at least two increasing entries".into(),
        ));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }

    let work = grid.with_breakpoints(g.time_breakpoints())?;
    let psi_w = interp_to(grid, psi, &work);
    let scale = psi_w.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let slack = 1e-10 * scale;

    let mut history: Vec<PenalizedPath> = Vec::new();
    let mut gaps = Vec::new();
    let mut monotonicity_violations = 0usize;
    let mut converged = false;
    for &m in m_schedule {
        let path = penalized_path(g, psi, z, grid, m)?;
        monotonicity_violations += path
            .psi_m
            .iter()
            .zip(&psi_w)
            .filter(|(pm, p)| **pm > **p + slack)
            .count();
        if let Some(prev) = history.last() {
            monotonicity_violations += path
                .psi_m
                .iter()
                .zip(&prev.psi_m)
                .filter(|(now, before)| **now < **before - slack)
                .count();
            let gap = path
                .a_m
                .iter()
                .zip(&prev.a_m)
                .fold(0.0_f64, |mx, (a, b)| mx.max((a - b).abs()));
            gaps.push(gap);
            history.push(path);
            if gap <= tol {
                converged = true;
                break;
            }
        } else {
            history.push(path);
        }
    }
    let final_gap = gaps.last().copied().unwrap_or(f64::NAN);
    if !converged {
        return Err(Error::SlowConvergence(format!(
            "drift excess still moving by {final_gap:.3e} > {tol:.1e} at the end of the \
             penalty schedule (last m = {})",
            history.last().map_or(f64::NAN, |p| p.m)
        )));
    }

    // The error of a^m decays like 1/m, so two penalties kill the leading
    // term: a ≈ (m₂ a^{m₂} − m₁ a^{m₁}) / (m₂ − m₁). The result is then
    // clipped to the structure a compensator must have; the clip magnitude
    // is below the extrapolation error, not a hidden correction.
    let last = &history[history.len() - 1];
    let prev = &history[history.len() - 2];
    let (m1, m2) = (prev.m, last.m);
    let mut a: Vec<f64> = last
        .a_m
        .iter()
        .zip(&prev.a_m)
        .map(|(&a2, &a1)| (m2 * a2 - m1 * a1) / (m2 - m1))
        .collect();
    a[0] = 0.0;
    for i in 1..a.len() {
        a[i] = a[i].max(a[i - 1]);
    }

    // Reconstruction: ψ(t) = ψ(T) + ∫_t^T g(s,z) ds + a(T) − a(t).
    let ts = work.points();
    let g_at = |s: f64| {
        g.eval(s, &[0.0], z)
            .expect("driver evaluation checked above")[0]
    };
    let mut tail = vec![0.0; ts.len()];
    for i in (0..ts.len() - 1).rev() {
        tail[i] =
            tail[i + 1] + quad::integrate(&g_at, ts[i], ts[i + 1], g.time_breakpoints(), QUAD_TOL)?;
    }
    let a_total = *a.last().unwrap();
    let psi_terminal = *psi_w.last().unwrap();
    let reconstruction_error = (0..ts.len()).fold(0.0_f64, |mx, i| {
        mx.max((psi_terminal + tail[i] + a_total - a[i] - psi_w[i]).abs())
    });

    Ok(DecompositionResult {
        grid: work,
        a,
        psi_m_history: history,
        converged,
        final_gap,
        gaps,
        monotonicity_violations,
        reconstruction_error,
    })
}

/// Linear interpolation of grid samples onto a refinement of the grid.
fn interp_to(grid: &TimeGrid, values: &[f64], target: &TimeGrid) -> Vec<f64> {
    let pts = grid.points();
    target
        .points()
        .iter()
        .map(|&t| {
            let hi = pts.partition_point(|p| *p < t).clamp(1, pts.len() - 1);
            let (a, b) = (pts[hi - 1], pts[hi]);
            let w = ((t - a) / (b - a)).clamp(0.0, 1.0);
            values[hi - 1] + w * (values[hi] - values[hi - 1])
        })
        .collect()
}

fn require_deterministic_scalar(g: &Generator) -> Result<()> {
    let meta = g.meta();
    if !meta.deterministic || !meta.y_independent || !meta.zero_at_zero {
        return Err(Error::UnsupportedGenerator(format!(
            "{} must be deterministic, y-independent, and zero at z=0 here",
            g.name()
        )));
    }
    if g.n() != 1 {
        return Err(Error::InvalidArgument(format!(
            "this decomposition is scalar; driver {} has n={}",
            g.name(),
            g.n()
        )));
    }
    Ok(())
}

// ═══════════════════════════════════════════════════════════════════════
//  Representation pairs
// ═══════════════════════════════════════════════════════════════════════

/// The driver/volatility pair realizing a single-increment conditional
/// value, sampled at grid nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepresentationPair {
    pub times: Vec<f64>,
    /// Driver path `g(s, Z_s)` per node.
    pub g_path: Vec<Vec<f64>>,
    /// Volatility path `Z_s = z·1_{[u,v]}(s)` per node.
    pub z_path: Vec<MatrixZ>,
    /// Largest `|g_s| − ρ(k)|Z_s|` observed (≤ 0 when the bound holds).
    pub max_excess: f64,
}

/// Builds the representation pair for `ξ = y + z(B_v − B_u)` on a grid
/// containing `u` and `v`, and enforces the declared modulus bound
/// `|g_s| ≤ ρ(k) |Z_s|` with `k` the terminal's radius.
///
/// A violated bound means the driver's declared modulus is too small —
/// that is reported as a metadata violation naming the node, not as a
/// numerical failure.
pub fn representation_pair(
    g: &Generator,
    xi: &RTerminal,
    grid: &TimeGrid,
) -> Result<RepresentationPair> {
    let meta = g.meta();
    if !meta.deterministic || !meta.y_independent || !meta.zero_at_zero {
        return Err(Error::UnsupportedGenerator(format!(
            "{} must be deterministic, y-independent, and zero at z=0 for \
             representation pairs",
            g.name()
        )));
    }
    let rho = meta.z_modulus.clone().ok_or_else(|| {
        Error::UnsupportedGenerator(format!(
            "{} declares no z-modulus; the representation bound needs one",
            g.name()
        ))
    })?;
    if xi.n() != g.n() || xi.d() != g.d() {
        return Err(Error::InvalidArgument(format!(
            "terminal is {}x{}, driver expects {}x{}",
            xi.n(),
            xi.d(),
            g.n(),
            g.d()
        )));
    }
    grid.require_node(xi.u().min(grid.horizon()))?;
    grid.require_node(xi.v().min(grid.horizon()))?;

    let rho_k = rho.eval(xi.bound());
    let zeros_y = vec![0.0; g.n()];
    let zero_z = MatrixZ::zeros(g.n(), g.d());
    let mut g_path = Vec::with_capacity(grid.points().len());
    let mut z_path = Vec::with_capacity(grid.points().len());
    let mut max_excess = f64::NEG_INFINITY;
    for &s in grid.points() {
        let zs = if xi.u() <= s && s <= xi.v() {
            xi.z().clone()
        } else {
            zero_z.clone()
        };
        let gs = g.eval(s, &zeros_y, &zs)?;
        let g_norm = gs.iter().map(|c| c * c).sum::<f64>().sqrt();
        let bound = rho_k * zs.norm();
        let excess = g_norm - bound;
        if excess > 1e-12 * (1.0 + bound) {
            return Err(Error::MetadataViolation(format!(
                "|g({s}, Z)| = {g_norm:.6e} exceeds ρ({:.3})·|Z| = {bound:.6e}; the \
                 declared modulus of {} is too small",
                xi.bound(),
                g.name()
            )));
        }
        max_excess = max_excess.max(excess);
        g_path.push(gs);
        z_path.push(zs);
    }
    Ok(RepresentationPair {
        times: grid.points().to_vec(),
        g_path,
        z_path,
        max_excess,
    })
}

/// Checks the pairwise modulus bound for two terminals sharing a driver:
/// `|g_s^ξ − g_s^η| ≤ ρ(k) |Z_s^ξ − Z_s^η|` nodewise, with `k` the larger
/// of the two radii. Returns the largest excess (≤ 0 means the bound
/// holds everywhere).
pub fn pair_modulus_excess(
    g: &Generator,
    xi: &RTerminal,
    eta: &RTerminal,
    grid: &TimeGrid,
) -> Result<f64> {
    let pair_xi = representation_pair(g, xi, grid)?;
    let pair_eta = representation_pair(g, eta, grid)?;
    let rho = g
        .meta()
        .z_modulus
        .clone()
        .expect("checked by representation_pair");
    let rho_k = rho.eval(xi.bound().max(eta.bound()));
    let mut max_excess = f64::NEG_INFINITY;
    for i in 0..pair_xi.times.len() {
        let dg = pair_xi.g_path[i]
            .iter()
            .zip(&pair_eta.g_path[i])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let dz = pair_xi.z_path[i].sub(&pair_eta.z_path[i])?.norm();
        max_excess = max_excess.max(dg - rho_k * dz);
    }
    Ok(max_excess)
}
