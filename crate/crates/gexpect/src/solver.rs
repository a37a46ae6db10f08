//! Explicit solvers for the solvable regimes.
//!
//! Three regimes admit direct computation of the nonlinear expectation:
//!
//! * **Prescribed volatility.** When the second unknown is pinned to a
//!   deterministic step process `h`, the whole problem collapses to a
//!   backward ODE `φ(s) = y + ∫_s^T g(r, φ(r), h(r)) dr`. [`solve_phi`]
//!   integrates it with classical Runge–Kutta on a grid that absorbs every
//!   jump of `h` and of `g`, refines until an independently computed
//!   integral residual meets tolerance, and reports that residual.
//!
//! * **Single-increment terminals.** For `ξ = y + z (B_v - B_u)` and a
//!   driver that ignores `y` and vanishes at `z = 0`, the conditional value
//!   at `t` is a constant plus (at most) one Brownian increment; the
//!   constant is an ordinary integral of `s ↦ g(s, z)`. [`cond_gexp_R`]
//!   evaluates that closed form.
//!
//! * **Entropic driver.** For `g = ν‖z‖² + γ(t)` the value at time zero is
//!   a log-moment functional of the terminal payoff, estimated from a path
//!   batch by [`entropic_value`].
//!
//! [`invariant_representation`] inverts the first regime: it reads the
//! driver back off the expectation operator as the slope of the value over
//! a shrinking window, the identity that makes drivers recoverable from
//! black-box oracles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::grid::TimeGrid;
use crate::matrix::MatrixZ;
use crate::paths::{mc_mean_dropping, MCEstimate, PathBatch};
use crate::quad;
use crate::step::StepProcess;
use crate::terminal::RTerminal;

// ═══════════════════════════════════════════════════════════════════════
//  Backward ODE with prescribed volatility
// ═══════════════════════════════════════════════════════════════════════

/// Options for [`solve_phi`].
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Target absolute residual of the integral equation.
    pub tol: f64,
    /// Maximum number of grid halvings before giving up.
    pub max_refinements: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_refinements: 12,
        }
    }
}

/// The deterministic part `φ` of a prescribed-volatility solution, stored
/// on the (refined) solve grid with linear interpolation between nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhiFunction {
    grid: TimeGrid,
    values: Vec<Vec<f64>>,
    residual: f64,
    refinements: usize,
}

impl PhiFunction {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// `φ(t_i)` at node `i` of [`PhiFunction::grid`].
    pub fn at_node(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    /// Achieved residual `max_i ‖φ(t_i) - y - ∫_{t_i}^T g‖_∞`, measured
    /// with a quadrature independent of the integrator.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Number of grid halvings that were needed.
    pub fn refinements(&self) -> usize {
        self.refinements
    }

    /// Linear interpolation between nodes; exact at nodes.
    pub fn value_at(&self, t: f64) -> Result<Vec<f64>> {
        let pts = self.grid.points();
        let horizon = self.grid.horizon();
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::InvalidArgument(format!(
                "time {t} outside [0, {horizon}]"
            )));
        }
        if let Some(i) = self.grid.index_of(t) {
            return Ok(self.values[i].clone());
        }
        let hi = pts.partition_point(|p| *p < t);
        let (a, b) = (pts[hi - 1], pts[hi]);
        let w = (t - a) / (b - a);
        Ok(self.values[hi - 1]
            .iter()
            .zip(&self.values[hi])
            .map(|(x, y)| x + w * (y - x))
            .collect())
    }
}

/// Solves `φ(s) = y + ∫_s^T g(r, φ(r), h(r)) dr` backward from the
/// terminal condition `φ(T) = y`.
///
/// The solve grid is the caller's grid merged with every interior jump of
/// `h` and of `g`, so each integration cell sees smooth data. Cells are
/// halved (all at once) until the residual of the integral equation —
/// recomputed by Hermite–Simpson quadrature, not by the integrator itself —
/// drops below `opts.tol`.
///
/// Fails with `UnsupportedGenerator` for drivers not declared
/// deterministic, and with `ToleranceNotReached` when the refinement cap
/// is hit first.
pub fn solve_phi(
    g: &Generator,
    y: &[f64],
    h: &StepProcess,
    grid: &TimeGrid,
    opts: SolveOptions,
) -> Result<PhiFunction> {
    if !g.meta().deterministic {
        return Err(Error::UnsupportedGenerator(format!(
            "{} is not declared deterministic; prescribed-volatility solves need a \
             deterministic driver",
            g.name()
        )));
    }
    if y.len() != g.n() {
        return Err(Error::InvalidArgument(format!(
            "terminal value has length {}, driver expects {}",
            y.len(),
            g.n()
        )));
    }
    if h.rows() != g.n() || h.cols() != g.d() {
        return Err(Error::InvalidArgument(format!(
            "volatility is {}x{}, driver expects {}x{}",
            h.rows(),
            h.cols(),
            g.n(),
            g.d()
        )));
    }
    if h.horizon() < grid.horizon() * (1.0 - 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "volatility ends at {}, grid extends to {}",
            h.horizon(),
            grid.horizon()
        )));
    }

    let mut cuts = h.interior_breakpoints().to_vec();
    cuts.extend_from_slice(g.time_breakpoints());
    let base = grid.with_breakpoints(&cuts)?;

    let mut best: Option<PhiFunction> = None;
    for k in 0..=opts.max_refinements {
        let fine = base.refine(1 << k);
        let phi = integrate_backward(g, y, h, &fine)?;
        let residual = integral_residual(g, y, h, &fine, &phi)?;
        if residual <= opts.tol {
            return Ok(PhiFunction {
                grid: fine,
                values: phi,
                residual,
                refinements: k,
            });
        }
        if best.as_ref().is_none_or(|b| residual < b.residual) {
            best = Some(PhiFunction {
                grid: fine,
                values: phi,
                residual,
                refinements: k,
            });
        }
    }
    Err(Error::ToleranceNotReached {
        achieved: best.map(|b| b.residual).unwrap_or(f64::INFINITY),
        requested: opts.tol,
    })
}

/// One classical Runge–Kutta sweep from `T` down to `0`.
fn integrate_backward(
    g: &Generator,
    y: &[f64],
    h: &StepProcess,
    grid: &TimeGrid,
) -> Result<Vec<Vec<f64>>> {
    let pts = grid.points();
    let n = y.len();
    let mut values = vec![vec![0.0; n]; pts.len()];
    *values.last_mut().unwrap() = y.to_vec();
    for i in (0..pts.len() - 1).rev() {
        let (a, b) = (pts[i], pts[i + 1]);
        let w = b - a;
        let z = h.value_on(a, b)?;
        let phi_b = values[i + 1].clone();

        let k1 = g.eval(b, &phi_b, z)?;
        let k2 = g.eval(0.5 * (a + b), &axpy(&phi_b, 0.5 * w, &k1), z)?;
        let k3 = g.eval(0.5 * (a + b), &axpy(&phi_b, 0.5 * w, &k2), z)?;
        let k4 = g.eval(a, &axpy(&phi_b, w, &k3), z)?;

        values[i] = (0..n)
            .map(|c| phi_b[c] + (w / 6.0) * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]))
            .collect();
    }
    Ok(values)
}

/// Residual of the integral equation, via Hermite–Simpson quadrature of
/// `g(·, φ(·), h(·))` accumulated from the terminal end. The midpoint value
/// of `φ` comes from the cubic Hermite interpolant (`φ' = -g` at the
/// endpoints), so the check shares no arithmetic with the RK4 sweep.
fn integral_residual(
    g: &Generator,
    y: &[f64],
    h: &StepProcess,
    grid: &TimeGrid,
    phi: &[Vec<f64>],
) -> Result<f64> {
    let pts = grid.points();
    let n = y.len();
    let mut cum = vec![0.0; n];
    let mut worst = 0.0_f64;
    for i in (0..pts.len() - 1).rev() {
        let (a, b) = (pts[i], pts[i + 1]);
        let w = b - a;
        let z = h.value_on(a, b)?;
        let ga = g.eval(a, &phi[i], z)?;
        let gb = g.eval(b, &phi[i + 1], z)?;
        let mid: Vec<f64> = (0..n)
            .map(|c| 0.5 * (phi[i][c] + phi[i + 1][c]) + (w / 8.0) * (gb[c] - ga[c]))
            .collect();
        let gm = g.eval(0.5 * (a + b), &mid, z)?;
        for c in 0..n {
            cum[c] += (w / 6.0) * (ga[c] + 4.0 * gm[c] + gb[c]);
        }
        let gap = (0..n)
            .map(|c| (phi[i][c] - y[c] - cum[c]).abs())
            .fold(0.0, f64::max);
        worst = worst.max(gap);
    }
    Ok(worst)
}

fn axpy(base: &[f64], a: f64, dir: &[f64]) -> Vec<f64> {
    base.iter().zip(dir).map(|(b, d)| b + a * d).collect()
}

// ═══════════════════════════════════════════════════════════════════════
//  Closed-form conditional values on single-increment terminals
// ═══════════════════════════════════════════════════════════════════════

/// The stochastic half of a conditional value: `z (B_to - B_from)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticIncrement {
    pub z: MatrixZ,
    pub from: f64,
    pub to: f64,
}

/// A conditional value at time `t`: a deterministic vector plus at most one
/// Brownian increment that is already measurable at `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RConditionalValue {
    terminal: RTerminal,
    t: f64,
    deterministic: Vec<f64>,
    stochastic: Option<StochasticIncrement>,
}

impl RConditionalValue {
    pub fn new(
        terminal: RTerminal,
        t: f64,
        deterministic: Vec<f64>,
        stochastic: Option<StochasticIncrement>,
    ) -> Self {
        // Zero increments are normalized away so that equality of values
        // coincides with structural equality.
        let stochastic = stochastic.filter(|s| !s.z.is_zero() && s.from < s.to);
        Self {
            terminal,
            t,
            deterministic,
            stochastic,
        }
    }

    /// The terminal this value conditions.
    pub fn terminal(&self) -> &RTerminal {
        &self.terminal
    }

    /// The conditioning time.
    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn deterministic(&self) -> &[f64] {
        &self.deterministic
    }

    pub fn stochastic(&self) -> Option<&StochasticIncrement> {
        self.stochastic.as_ref()
    }

    /// Reinterprets the value as a terminal in its own right, enabling
    /// composition of conditionings.
    pub fn as_terminal(&self) -> Result<RTerminal> {
        match &self.stochastic {
            None => {
                let n = self.deterministic.len();
                let d = self.terminal.d();
                RTerminal::new(
                    self.deterministic.clone(),
                    MatrixZ::zeros(n, d),
                    self.t,
                    self.t,
                )
            }
            Some(inc) => {
                RTerminal::new(self.deterministic.clone(), inc.z.clone(), inc.from, inc.to)
            }
        }
    }

    /// Realizes the value on one simulated path.
    pub fn evaluate_on_path(&self, batch: &PathBatch, p: usize) -> Result<Vec<f64>> {
        match &self.stochastic {
            None => Ok(self.deterministic.clone()),
            Some(inc) => {
                let i = batch.grid().require_node(inc.from)?;
                let j = batch.grid().require_node(inc.to)?;
                let db = batch.increment_between(p, i, j);
                let zdb = inc.z.apply(&db)?;
                Ok(self
                    .deterministic
                    .iter()
                    .zip(zdb)
                    .map(|(a, b)| a + b)
                    .collect())
            }
        }
    }
}

/// Closed-form conditional value of `ξ = y + z (B_v - B_u)` at time `t`.
///
/// Requires a driver that is deterministic, independent of `y`, and zero at
/// `z = 0`. The three branches:
///
/// * `t ≤ u`: the value is the constant `y + ∫_u^v g(s, z) ds`;
/// * `u < t ≤ v`: the value is `y + ∫_t^v g(s, z) ds + z (B_t - B_u)`;
/// * `t > v`: the terminal is already determined and the value is `ξ`.
///
/// Constants are preserved exactly: a terminal with `z = 0` or `u = v`
/// returns `y` at every `t` without touching quadrature.
#[allow(non_snake_case)]
pub fn cond_gexp_R(g: &Generator, xi: &RTerminal, t: f64, tol: f64) -> Result<RConditionalValue> {
    let meta = g.meta();
    if !meta.deterministic || !meta.y_independent || !meta.zero_at_zero {
        return Err(Error::UnsupportedGenerator(format!(
            "{} must be deterministic, y-independent, and zero at z=0 for closed-form \
             conditional values (flags: det={}, y_indep={}, zero={})",
            g.name(),
            meta.deterministic,
            meta.y_independent,
            meta.zero_at_zero
        )));
    }
    if xi.n() != g.n() || xi.d() != g.d() {
        return Err(Error::InvalidArgument(format!(
            "terminal is {}x{}, driver expects {}x{}",
            xi.n(),
            xi.d(),
            g.n(),
            g.d()
        )));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "conditioning time must be ≥ 0, got {t}"
        )));
    }

    if xi.is_constant() {
        return Ok(RConditionalValue::new(xi.clone(), t, xi.y().to_vec(), None));
    }

    let (u, v) = (xi.u(), xi.v());
    let n = xi.n();
    let zeros = vec![0.0; n];
    let drift = |lo: f64, hi: f64| -> Result<Vec<f64>> {
        quad::integrate_vec(
            &|s| {
                g.eval(s, &zeros, xi.z())
                    .expect("driver evaluation checked above")
            },
            lo,
            hi,
            g.time_breakpoints(),
            tol,
            n,
        )
    };

    if t <= u {
        let det = add(xi.y(), &drift(u, v)?);
        Ok(RConditionalValue::new(xi.clone(), t, det, None))
    } else if t <= v {
        let det = add(xi.y(), &drift(t, v)?);
        let inc = StochasticIncrement {
            z: xi.z().clone(),
            from: u,
            to: t,
        };
        Ok(RConditionalValue::new(xi.clone(), t, det, Some(inc)))
    } else {
        let inc = StochasticIncrement {
            z: xi.z().clone(),
            from: u,
            to: v,
        };
        Ok(RConditionalValue::new(
            xi.clone(),
            t,
            xi.y().to_vec(),
            Some(inc),
        ))
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

// ═══════════════════════════════════════════════════════════════════════
//  Mean-field form: deterministic part plus a stochastic integral
// ═══════════════════════════════════════════════════════════════════════

/// A prescribed-volatility solution in explicit form: the value process is
/// `Y_s = φ(s) + ∫_0^s h dB` and the volatility is `h` itself.
#[derive(Debug, Clone)]
pub struct MeanFieldSolution {
    pub phi: PhiFunction,
    pub volatility: StepProcess,
}

/// Solves the prescribed-volatility problem and packages the pair
/// `(Y, Z) = (φ + ∫ h dB, h)`.
pub fn meanfield_solution(
    g: &Generator,
    y: &[f64],
    h: &StepProcess,
    grid: &TimeGrid,
    opts: SolveOptions,
) -> Result<MeanFieldSolution> {
    Ok(MeanFieldSolution {
        phi: solve_phi(g, y, h, grid, opts)?,
        volatility: h.clone(),
    })
}

impl MeanFieldSolution {
    /// Realizes `Y` at a node of the batch grid on one path. The batch grid
    /// must resolve the volatility's breakpoints, since the stochastic
    /// integral of a step process is a finite sum of `z · ΔB` terms.
    pub fn y_on_path(&self, batch: &PathBatch, p: usize, node: usize) -> Result<Vec<f64>> {
        let grid = batch.grid();
        let t = grid.node(node);
        let mut value = self.phi.value_at(t)?;
        for j in 0..node {
            let z = self.volatility.value_on(grid.node(j), grid.node(j + 1))?;
            let zdb = z.apply(batch.increment(p, j))?;
            for (v, w) in value.iter_mut().zip(zdb) {
                *v += w;
            }
        }
        Ok(value)
    }
}

// ═══════════════════════════════════════════════════════════════════════
//  Reading the driver off the operator
// ═══════════════════════════════════════════════════════════════════════

/// Estimates of `g(t, y, z)` from shrinking-window values, one per window
/// width, together with their extrapolated limit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvariantRepresentation {
    /// `(ε, (Y_t^{t+ε} - y) / ε)` for each requested width.
    pub per_eps: Vec<(f64, Vec<f64>)>,
    /// Componentwise polynomial extrapolation of the estimates to `ε = 0`.
    pub extrapolated: Vec<f64>,
}

/// Recovers `g(t, y, z)` as the slope of the prescribed-volatility value
/// over shrinking windows `[t, t + ε]` with constant volatility `z`.
///
/// For every `ε` the backward ODE is solved on the window (in rebased
/// coordinates, so tiny absolute widths cost no precision), the slope
/// `(φ(t) - y)/ε` is recorded, and the sequence is extrapolated to zero.
/// For drivers constant in `t` and independent of `y` the single-`ε`
/// estimates are already exact.
pub fn invariant_representation(
    g: &Generator,
    t: f64,
    y: &[f64],
    z: &MatrixZ,
    eps: &[f64],
    opts: SolveOptions,
) -> Result<InvariantRepresentation> {
    if eps.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one window width".into(),
        ));
    }
    if eps.windows(2).any(|w| w[1] >= w[0]) || eps.iter().any(|e| *e <= 0.0) {
        return Err(Error::InvalidArgument(
            "window widths must be positive and strictly decreasing".into(),
        ));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "base time must be ≥ 0, got {t}"
        )));
    }

    let mut per_eps = Vec::with_capacity(eps.len());
    for &e in eps {
        // Below this width the window degenerates in floating point.
        if e < 1e-13 * t.max(1.0) {
            return Err(Error::GridTooCoarse(format!(
                "window width {e} is below floating-point resolution at t={t}"
            )));
        }
        let shifted = g.shift_time(t, e);
        let window = crate::grid::make_uniform_grid(e, 8)?;
        let window = window.with_breakpoints(shifted.time_breakpoints())?;
        let h = StepProcess::constant(z.clone(), e)?;
        let phi = solve_phi(&shifted, y, &h, &window, opts)?;
        let slope: Vec<f64> = phi
            .at_node(0)
            .iter()
            .zip(y)
            .map(|(p, yc)| (p - yc) / e)
            .collect();
        per_eps.push((e, slope));
    }

    let n = y.len();
    let extrapolated = (0..n)
        .map(|c| {
            let pts: Vec<(f64, f64)> = per_eps.iter().map(|(e, s)| (*e, s[c])).collect();
            quad::extrapolate_to_zero(&pts)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(InvariantRepresentation {
        per_eps,
        extrapolated,
    })
}

// ═══════════════════════════════════════════════════════════════════════
//  Entropic values
// ═══════════════════════════════════════════════════════════════════════

/// Monte Carlo estimate of an entropic value, with the standard error
/// propagated through the logarithm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropicEstimate {
    /// The time-zero value `ln(mean) / (2ν)` plus the exact rate integral.
    pub value: f64,
    /// Delta-method standard error: `se(mean) / (2ν · mean)`.
    pub std_error: f64,
    /// The underlying exponential-moment estimate.
    pub raw: MCEstimate,
    /// Samples dropped by the integrability guard (capped at 0.1%).
    pub dropped: usize,
    pub nu: f64,
}

/// Fraction of non-finite exponential samples tolerated before the run is
/// declared an integrability failure.
pub const ENTROPIC_BAD_FRACTION: f64 = 1e-3;

/// Time-zero value under the driver `ν‖z‖² + γ(t)`:
/// `(1 / 2ν) · ln E[exp(2ν (ξ + ∫_0^T γ))]`, estimated from payoff samples.
///
/// The rate integral is computed exactly from the step segments of `γ`.
/// Non-finite exponential samples signal that the payoff fails the
/// exponential-moment condition this formula needs; more than 0.1% of them
/// aborts the estimate, fewer are dropped and reported.
pub fn entropic_value(
    nu: f64,
    gamma: Option<&StepProcess>,
    payoff: &[f64],
) -> Result<EntropicEstimate> {
    if !(nu.is_finite() && nu > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ν must be positive, got {nu}"
        )));
    }
    let shift = match gamma {
        Some(r) => r.integrate_scalar_to(r.horizon())?,
        None => 0.0,
    };
    let (raw, dropped) = mc_mean_dropping(
        payoff,
        |x| (2.0 * nu * (x + shift)).exp(),
        ENTROPIC_BAD_FRACTION,
    )?;
    if !raw.mean.is_finite() || raw.mean <= 0.0 {
        return Err(Error::NonFiniteSamples {
            bad: payoff.len(),
            total: payoff.len(),
        });
    }
    Ok(EntropicEstimate {
        value: raw.mean.ln() / (2.0 * nu),
        std_error: raw.std_error / (2.0 * nu * raw.mean),
        raw,
        dropped,
        nu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{builtin_generator, BuiltinGenerator, GeneratorMeta};
    use crate::grid::make_uniform_grid;
    use crate::paths::{evaluate_terminal, simulate};
    use crate::quad::QUAD_TOL;

    fn linear(mu: f64) -> Generator {
        builtin_generator(BuiltinGenerator::LinearDrift { mu, d: 1 }).unwrap()
    }

    fn zero_gen() -> Generator {
        builtin_generator(BuiltinGenerator::Zero { n: 1, d: 1 }).unwrap()
    }

    #[test]
    fn zero_driver_keeps_phi_constant() {
        let grid = make_uniform_grid(1.0, 10).unwrap();
        let h = StepProcess::constant(MatrixZ::scalar(1.5), 1.0).unwrap();
        let phi = solve_phi(&zero_gen(), &[2.0], &h, &grid, SolveOptions::default()).unwrap();
        for i in 0..=phi.grid().steps() {
            assert_eq!(phi.at_node(i), &[2.0]);
        }
        assert!(phi.residual() <= 1e-15);
    }

    #[test]
    fn drift_over_an_indicator_window() {
        // φ(0) = 1 + μ ‖z‖ (v - u) = 1 + 0.5 · 2 · 0.6 = 1.6, exactly.
        let grid = make_uniform_grid(1.0, 10).unwrap();
        let h = StepProcess::indicator(MatrixZ::scalar(2.0), 0.2, 0.8, 1.0).unwrap();
        let phi = solve_phi(&linear(0.5), &[1.0], &h, &grid, SolveOptions::default()).unwrap();
        let v0 = phi.value_at(0.0).unwrap()[0];
        assert!((v0 - 1.6).abs() < 1e-12, "{v0}");
        // Inside the window the remaining drift shrinks linearly.
        let v_mid = phi.value_at(0.5).unwrap()[0];
        assert!((v_mid - 1.3).abs() < 1e-12, "{v_mid}");
        // Past the window nothing is left.
        let v_late = phi.value_at(0.9).unwrap()[0];
        assert!((v_late - 1.0).abs() < 1e-12, "{v_late}");
    }

    #[test]
    fn linear_y_feedback_reproduces_the_exponential() {
        // g = a·y gives φ(s) = y e^{a (T - s)}; at a = 1, T = 1: φ(0) = e.
        let meta = GeneratorMeta {
            lipschitz_y: 1.0,
            deterministic: true,
            y_independent: false,
            zero_at_zero: false,
            z_modulus: Some(crate::generator::ZModulus::constant(0.0)),
        };
        let g = Generator::custom("a*y", 1, 1, meta, vec![], |_, y, _| vec![y[0]]).unwrap();
        let grid = make_uniform_grid(1.0, 16).unwrap();
        let h = StepProcess::zero(1, 1, 1.0).unwrap();
        let phi = solve_phi(&g, &[1.0], &h, &grid, SolveOptions::default()).unwrap();
        let v0 = phi.value_at(0.0).unwrap()[0];
        assert!(
            (v0 - std::f64::consts::E).abs() < 1e-9,
            "{v0} (residual {})",
            phi.residual()
        );
        assert!(phi.residual() <= 1e-10);
    }

    #[test]
    fn refinement_cap_reports_achieved_residual() {
        let meta = GeneratorMeta {
            lipschitz_y: 1.0,
            deterministic: true,
            y_independent: false,
            zero_at_zero: false,
            z_modulus: None,
        };
        let g = Generator::custom("a*y", 1, 1, meta, vec![], |_, y, _| vec![y[0]]).unwrap();
        let grid = make_uniform_grid(1.0, 2).unwrap();
        let h = StepProcess::zero(1, 1, 1.0).unwrap();
        let err = solve_phi(
            &g,
            &[1.0],
            &h,
            &grid,
            SolveOptions {
                tol: 1e-16,
                max_refinements: 1,
            },
        )
        .unwrap_err();
        match err {
            Error::ToleranceNotReached {
                achieved,
                requested,
            } => {
                assert!(achieved > requested);
            }
            other => panic!("expected ToleranceNotReached, got {other:?}"),
        }
    }

    #[test]
    fn non_deterministic_drivers_are_refused() {
        let meta = GeneratorMeta {
            lipschitz_y: 0.0,
            deterministic: false,
            y_independent: true,
            zero_at_zero: true,
            z_modulus: None,
        };
        let g = Generator::custom("rand", 1, 1, meta, vec![], |_, _, _| vec![0.0]).unwrap();
        let grid = make_uniform_grid(1.0, 4).unwrap();
        let h = StepProcess::zero(1, 1, 1.0).unwrap();
        assert!(matches!(
            solve_phi(&g, &[0.0], &h, &grid, SolveOptions::default()),
            Err(Error::UnsupportedGenerator(_))
        ));
    }

    #[test]
    fn conditional_value_branches() {
        let g = linear(0.5);
        let xi = RTerminal::scalar(1.0, 2.0, 0.2, 0.8).unwrap();

        // Before the window: fully deterministic.
        let before = cond_gexp_R(&g, &xi, 0.0, QUAD_TOL).unwrap();
        assert!((before.deterministic()[0] - 1.6).abs() < 1e-12);
        assert!(before.stochastic().is_none());

        // Inside: remaining drift plus the increment seen so far.
        let mid = cond_gexp_R(&g, &xi, 0.5, QUAD_TOL).unwrap();
        assert!((mid.deterministic()[0] - 1.3).abs() < 1e-12);
        let inc = mid.stochastic().unwrap();
        assert_eq!((inc.from, inc.to), (0.2, 0.5));
        assert_eq!(inc.z, MatrixZ::scalar(2.0));

        // After: the terminal itself.
        let after = cond_gexp_R(&g, &xi, 0.9, QUAD_TOL).unwrap();
        assert_eq!(after.deterministic(), &[1.0]);
        let inc = after.stochastic().unwrap();
        assert_eq!((inc.from, inc.to), (0.2, 0.8));
    }

    #[test]
    fn constants_are_preserved_exactly() {
        let g = linear(0.9);
        let xi = RTerminal::scalar(3.0, 0.0, 0.2, 0.8).unwrap();
        for t in [0.0, 0.5, 1.0, 2.0] {
            let v = cond_gexp_R(&g, &xi, t, QUAD_TOL).unwrap();
            assert_eq!(v.deterministic(), &[3.0]);
            assert!(v.stochastic().is_none());
        }
    }

    #[test]
    fn drivers_lacking_structure_are_refused() {
        let gamma = StepProcess::scalar_constant(0.1, 1.0).unwrap();
        let g = builtin_generator(BuiltinGenerator::Quadratic {
            nu: 0.5,
            gamma: Some(gamma),
            d: 1,
        })
        .unwrap();
        let xi = RTerminal::scalar(0.0, 1.0, 0.0, 1.0).unwrap();
        // γ ≠ 0 breaks zero-at-zero, which the closed form needs.
        assert!(matches!(
            cond_gexp_R(&g, &xi, 0.0, QUAD_TOL),
            Err(Error::UnsupportedGenerator(_))
        ));
    }

    #[test]
    fn composition_at_an_intermediate_time_telescopes() {
        let g = linear(0.7);
        let xi = RTerminal::scalar(0.5, 1.5, 0.3, 0.9).unwrap();
        let inner = cond_gexp_R(&g, &xi, 0.6, QUAD_TOL).unwrap();
        let outer = cond_gexp_R(&g, &inner.as_terminal().unwrap(), 0.1, QUAD_TOL).unwrap();
        let direct = cond_gexp_R(&g, &xi, 0.1, QUAD_TOL).unwrap();
        assert!((outer.deterministic()[0] - direct.deterministic()[0]).abs() < 1e-12);
        assert!(outer.stochastic().is_none());
        assert!(direct.stochastic().is_none());
    }

    #[test]
    fn meanfield_value_matches_conditional_value_pathwise() {
        let g = linear(0.5);
        let grid = make_uniform_grid(1.0, 10).unwrap();
        let h = StepProcess::indicator(MatrixZ::scalar(2.0), 0.2, 0.8, 1.0).unwrap();
        let sol = meanfield_solution(&g, &[1.0], &h, &grid, SolveOptions::default()).unwrap();
        let batch_grid = grid.with_breakpoints(&[0.2, 0.8]).unwrap();
        let batch = simulate(&batch_grid, 20, 1, 77).unwrap();

        let xi = RTerminal::scalar(1.0, 2.0, 0.2, 0.8).unwrap();
        let node = batch_grid.require_node(0.5).unwrap();
        let cv = cond_gexp_R(&g, &xi, 0.5, QUAD_TOL).unwrap();
        for p in 0..batch.m() {
            let y_mf = sol.y_on_path(&batch, p, node).unwrap()[0];
            let y_cf = cv.evaluate_on_path(&batch, p).unwrap()[0];
            assert!((y_mf - y_cf).abs() < 1e-10, "path {p}: {y_mf} vs {y_cf}");
        }
    }

    #[test]
    fn representation_is_exact_for_time_constant_drivers() {
        let g = linear(0.5);
        let rep = invariant_representation(
            &g,
            0.3,
            &[2.0],
            &MatrixZ::scalar(2.0),
            &[0.02, 0.01],
            SolveOptions::default(),
        )
        .unwrap();
        for (_, slope) in &rep.per_eps {
            assert!((slope[0] - 1.0).abs() < 1e-12, "{}", slope[0]);
        }
        assert!((rep.extrapolated[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn representation_extrapolates_time_dependent_drivers() {
        // g(t, z) = t ‖z‖: the ε-window slope at t = 0.5 is 0.5 + ε/2.
        let meta = GeneratorMeta {
            lipschitz_y: 0.0,
            deterministic: true,
            y_independent: true,
            zero_at_zero: true,
            z_modulus: Some(crate::generator::ZModulus::constant(1.0)),
        };
        let g =
            Generator::custom("t|z|", 1, 1, meta, vec![], |t, _, z| vec![t * z.norm()]).unwrap();
        let rep = invariant_representation(
            &g,
            0.5,
            &[0.0],
            &MatrixZ::scalar(1.0),
            &[0.04, 0.02, 0.01],
            SolveOptions::default(),
        )
        .unwrap();
        let single = rep.per_eps.last().unwrap().1[0];
        assert!((single - 0.505).abs() < 1e-10, "{single}");
        assert!(
            (rep.extrapolated[0] - 0.5).abs() < 1e-10,
            "{}",
            rep.extrapolated[0]
        );
    }

    #[test]
    fn degenerate_windows_are_too_coarse() {
        let g = linear(1.0);
        let err = invariant_representation(
            &g,
            1.0,
            &[0.0],
            &MatrixZ::scalar(1.0),
            &[1e-15],
            SolveOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::GridTooCoarse(_)));
    }

    #[test]
    fn entropic_value_of_a_brownian_increment() {
        // ξ = B_1 under ν = 1/2: value ln E[e^{B_1}] = 1/2.
        let grid = make_uniform_grid(1.0, 2).unwrap();
        let batch = simulate(&grid, 50_000, 1, 4242).unwrap();
        let xi = RTerminal::scalar(0.0, 1.0, 0.0, 1.0).unwrap();
        let payoff = evaluate_terminal(&batch, &xi).unwrap();
        let est = entropic_value(0.5, None, &payoff).unwrap();
        assert!(
            (est.value - 0.5).abs() < 4.0 * est.std_error,
            "{} ± {}",
            est.value,
            est.std_error
        );
        assert_eq!(est.dropped, 0);
    }

    #[test]
    fn entropic_rate_shifts_are_exact() {
        let gamma = StepProcess::from_segments(
            vec![0.0, 0.5, 1.0],
            vec![MatrixZ::scalar(0.2), MatrixZ::scalar(0.4)],
        )
        .unwrap();
        let payoff = vec![1.0; 100];
        let est = entropic_value(0.5, Some(&gamma), &payoff).unwrap();
        // Constant payoff: value = 1 + ∫γ = 1 + 0.3, spread at rounding level.
        assert!((est.value - 1.3).abs() < 1e-12);
        assert!(est.std_error < 1e-12);
    }

    #[test]
    fn integrability_violations_are_reported() {
        let mut payoff = vec![0.0; 1000];
        for slot in payoff.iter_mut().take(20) {
            *slot = 1e300; // exp overflows: 2% bad, over the 0.1% cap.
        }
        assert!(matches!(
            entropic_value(1.0, None, &payoff),
            Err(Error::NonFiniteSamples { .. })
        ));
    }

    #[test]
    fn entropic_rejects_nonpositive_nu() {
        assert!(entropic_value(0.0, None, &[1.0]).is_err());
        assert!(entropic_value(-1.0, None, &[1.0]).is_err());
    }
}
