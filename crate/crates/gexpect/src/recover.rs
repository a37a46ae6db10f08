//! Recovering the driver from an expectation oracle.
//!
//! An operator that assigns conditional values to single-increment
//! terminals already determines its driver: the value of `z B_t` at time
//! zero is a primitive `G(t, z) = ∫_0^t g(s, z) ds`, so differentiating the
//! observable `G` in `t` reads the driver back off the black box. This
//! module samples `G` on a grid, differentiates it, and closes the loop in
//! both directions — reintegration must reproduce `G` (necessity), and the
//! recovered table must predict every conditional value the oracle produces
//! on single-increment terminals (sufficiency on the test class).
//!
//! [`converse_compare`] applies the same machinery to two oracles at once:
//! since values determine drivers and drivers determine values, dominance,
//! equality, or incomparability of two operators is decidable from their
//! recovered tables, and the module cross-checks the verdict against
//! directly sampled values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorMeta};
use crate::grid::TimeGrid;
use crate::matrix::MatrixZ;
use crate::quad::QUAD_TOL;
use crate::rng::UniformStream;
use crate::solver::{cond_gexp_R, RConditionalValue};
use crate::terminal::RTerminal;

// ═══════════════════════════════════════════════════════════════════════
//  Oracles
// ═══════════════════════════════════════════════════════════════════════

/// A black box producing conditional values of single-increment terminals.
///
/// The contract mirrors the operator being modeled: values must be
/// consistent under composition, preserve constants, and be monotone — the
/// audit suite in [`crate::checks`] tests exactly that. Recovery only needs
/// `eval_r` at time zero, where the result must be purely deterministic.
pub trait ExpectationOracle: Send + Sync {
    /// Conditional value of `ξ` at time `t`.
    fn eval_r(&self, xi: &RTerminal, t: f64) -> Result<RConditionalValue>;

    /// Solution and Brownian dimensions `(n, d)`.
    fn dims(&self) -> (usize, usize);

    /// Human-readable identity for reports.
    fn name(&self) -> String;

    /// Whether the oracle can realize values pathwise (needed only by the
    /// zero-one-law audit, which is skipped otherwise).
    fn supports_pathwise(&self) -> bool {
        false
    }
}

/// The reference oracle: closed-form conditional values under a driver
/// that is deterministic, `y`-independent, and zero at `z = 0`.
#[derive(Debug, Clone)]
pub struct GOracle {
    g: Generator,
    tol: f64,
}

impl GOracle {
    pub fn new(g: Generator) -> Result<Self> {
        let meta = g.meta();
        if !meta.deterministic || !meta.y_independent || !meta.zero_at_zero {
            return Err(Error::UnsupportedGenerator(format!(
                "{} cannot back a closed-form oracle (needs deterministic, \
                 y-independent, zero-at-zero)",
                g.name()
            )));
        }
        Ok(Self { g, tol: QUAD_TOL })
    }

    pub fn generator(&self) -> &Generator {
        &self.g
    }
}

impl ExpectationOracle for GOracle {
    fn eval_r(&self, xi: &RTerminal, t: f64) -> Result<RConditionalValue> {
        cond_gexp_R(&self.g, xi, t, self.tol)
    }

    fn dims(&self) -> (usize, usize) {
        (self.g.n(), self.g.d())
    }

    fn name(&self) -> String {
        format!("closed-form({})", self.g.name())
    }
}

/// Fault-injection wrapper: adds `bump` to every deterministic part,
/// optionally only at `t = 0` and optionally sparing constant terminals.
/// Exists so that audits can demonstrate their failure witnesses.
#[derive(Debug, Clone)]
pub struct PerturbedOracle<O> {
    pub inner: O,
    pub bump: f64,
    pub only_at_time_zero: bool,
    pub skip_constants: bool,
}

impl<O: ExpectationOracle> ExpectationOracle for PerturbedOracle<O> {
    fn eval_r(&self, xi: &RTerminal, t: f64) -> Result<RConditionalValue> {
        let v = self.inner.eval_r(xi, t)?;
        let applies =
            (!self.only_at_time_zero || t == 0.0) && !(self.skip_constants && xi.is_constant());
        if !applies {
            return Ok(v);
        }
        let det = v.deterministic().iter().map(|c| c + self.bump).collect();
        Ok(RConditionalValue::new(
            v.terminal().clone(),
            v.t(),
            det,
            v.stochastic().cloned(),
        ))
    }

    fn dims(&self) -> (usize, usize) {
        self.inner.dims()
    }

    fn name(&self) -> String {
        format!("perturbed({}, +{})", self.inner.name(), self.bump)
    }
}

// ═══════════════════════════════════════════════════════════════════════
//  Sampling the primitive G
// ═══════════════════════════════════════════════════════════════════════

/// Samples of `G(t, z)` — time-zero values of `z B_t` — on a grid × z-set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GFunction {
    grid: TimeGrid,
    z_set: Vec<MatrixZ>,
    /// `values[i][j]` is the `n`-vector `G(t_i, z_j)`.
    values: Vec<Vec<Vec<f64>>>,
}

/// Evaluates `G(t_i, z_j)` for every grid node and every `z` in the set.
///
/// Contract checks: values at time zero must be purely deterministic (no
/// stochastic part survives conditioning a window that starts at zero), and
/// `G(0, z) = 0` because `z(B_0 - B_0)` is the constant zero.
#[allow(non_snake_case)]
pub fn sample_G(
    oracle: &dyn ExpectationOracle,
    grid: &TimeGrid,
    z_set: &[MatrixZ],
) -> Result<GFunction> {
    let (n, d) = oracle.dims();
    if z_set.is_empty() {
        return Err(Error::InvalidArgument("need at least one z sample".into()));
    }
    let mut values = Vec::with_capacity(grid.points().len());
    for &t in grid.points() {
        let mut row = Vec::with_capacity(z_set.len());
        for (j, z) in z_set.iter().enumerate() {
            if z.rows() != n || z.cols() != d {
                return Err(Error::InvalidArgument(format!(
                    "z sample {j} is {}x{}, oracle expects {}x{}",
                    z.rows(),
                    z.cols(),
                    n,
                    d
                )));
            }
            let xi = RTerminal::new(vec![0.0; n], z.clone(), 0.0, t)?;
            let val = oracle.eval_r(&xi, 0.0)?;
            if val.stochastic().is_some() {
                return Err(Error::OracleContractViolation(format!(
                    "{} returned a stochastic part for a window starting at 0",
                    oracle.name()
                )));
            }
            if t == 0.0 {
                let norm = val
                    .deterministic()
                    .iter()
                    .map(|c| c.abs())
                    .fold(0.0, f64::max);
                if norm > 1e-12 {
                    return Err(Error::OracleContractViolation(format!(
                        "{} violates G(0, z) = 0: |G| = {norm:.3e} at z index {j}",
                        oracle.name()
                    )));
                }
            }
            row.push(val.deterministic().to_vec());
        }
        values.push(row);
    }
    Ok(GFunction {
        grid: grid.clone(),
        z_set: z_set.to_vec(),
        values,
    })
}

impl GFunction {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn z_set(&self) -> &[MatrixZ] {
        &self.z_set
    }

    /// `G(t_i, z_j)` as an `n`-vector.
    pub fn value(&self, i: usize, j: usize) -> &[f64] {
        &self.values[i][j]
    }

    /// Builds a table directly from scalar samples (`n = d = 1`), e.g. read
    /// from CSV. `rows[i][j]` is `G(t_i, z_j)`.
    pub fn from_scalar_rows(
        grid: TimeGrid,
        z_entries: &[f64],
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if rows.len() != grid.points().len() || rows.iter().any(|r| r.len() != z_entries.len()) {
            return Err(Error::InvalidArgument(format!(
                "sample table must be {} x {}",
                grid.points().len(),
                z_entries.len()
            )));
        }
        let z_set = z_entries.iter().map(|&z| MatrixZ::scalar(z)).collect();
        let values = rows
            .into_iter()
            .map(|r| r.into_iter().map(|v| vec![v]).collect())
            .collect();
        Ok(Self {
            grid,
            z_set,
            values,
        })
    }

    /// CSV serialization for scalar tables: header `t,z,G`, one row per
    /// `(t_i, z_j)` sample.
    pub fn to_csv_string(&self) -> Result<String> {
        scalar_csv(&self.grid, &self.z_set, &self.values, "G")
    }

    /// Parses the scalar CSV format produced by [`GFunction::to_csv_string`].
    pub fn from_csv_string(text: &str) -> Result<Self> {
        let (grid, z_entries, rows) = parse_scalar_csv(text, "G")?;
        Self::from_scalar_rows(grid, &z_entries, rows)
    }
}

// ═══════════════════════════════════════════════════════════════════════
//  Differentiation: the recovered table
// ═══════════════════════════════════════════════════════════════════════

/// A recovered driver table `g(t_i, z_j)` with roughness diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorTable {
    grid: TimeGrid,
    z_set: Vec<MatrixZ>,
    /// `values[i][j]` is the `n`-vector `g(t_i, z_j)`.
    values: Vec<Vec<Vec<f64>>>,
    /// Per-`z` flag: the sampled `G(·, z)` shows curvature too large for
    /// the grid, so the derivative near the flagged points is unreliable.
    rough: Vec<bool>,
}

/// Differentiates sampled `G` in `t`: three-point (centered on uniform
/// grids) stencils at interior nodes, one-sided two-point stencils at the
/// ends. A column whose second differences are large relative to its scale
/// is flagged as rough rather than rejected.
pub fn recover_generator(gf: &GFunction) -> Result<GeneratorTable> {
    let pts = gf.grid.points();
    let n_nodes = pts.len();
    if n_nodes < 3 {
        return Err(Error::GridTooCoarse(
            "derivative recovery needs at least three grid nodes".into(),
        ));
    }
    let n = gf.values[0][0].len();
    let mut values = vec![vec![vec![0.0; n]; gf.z_set.len()]; n_nodes];
    let mut rough = vec![false; gf.z_set.len()];

    for j in 0..gf.z_set.len() {
        let mut sup_g = 0.0_f64;
        let mut max_dd = 0.0_f64;
        #[allow(clippy::needless_range_loop)] // scatter-writes values[i][j][c]
        for c in 0..n {
            let col: Vec<f64> = (0..n_nodes).map(|i| gf.values[i][j][c]).collect();
            sup_g = col.iter().fold(sup_g, |m, v| m.max(v.abs()));

            values[0][j][c] = (col[1] - col[0]) / (pts[1] - pts[0]);
            values[n_nodes - 1][j][c] =
                (col[n_nodes - 1] - col[n_nodes - 2]) / (pts[n_nodes - 1] - pts[n_nodes - 2]);
            for i in 1..n_nodes - 1 {
                let h1 = pts[i] - pts[i - 1];
                let h2 = pts[i + 1] - pts[i];
                // Second-order three-point derivative on a nonuniform grid;
                // reduces to the centered difference when h1 = h2.
                values[i][j][c] = -col[i - 1] * h2 / (h1 * (h1 + h2))
                    + col[i] * (h2 - h1) / (h1 * h2)
                    + col[i + 1] * h1 / (h2 * (h1 + h2));
                // Curvature probe: second difference rescaled to the mean
                // spacing, comparable across grids.
                let dd =
                    2.0 * ((col[i + 1] - col[i]) / h2 - (col[i] - col[i - 1]) / h1) / (h1 + h2);
                max_dd = max_dd.max(dd.abs() * (0.5 * (h1 + h2)).powi(2));
            }
        }
        rough[j] = max_dd > 0.01 * (1.0 + sup_g);
    }
    Ok(GeneratorTable {
        grid: gf.grid.clone(),
        z_set: gf.z_set.clone(),
        values,
        rough,
    })
}

impl GeneratorTable {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn z_set(&self) -> &[MatrixZ] {
        &self.z_set
    }

    /// Recovered `g(t_i, z_j)` as an `n`-vector.
    pub fn value(&self, i: usize, j: usize) -> &[f64] {
        &self.values[i][j]
    }

    /// Whether column `j` was flagged as rough.
    pub fn is_rough(&self, j: usize) -> bool {
        self.rough[j]
    }

    /// A driver that reproduces column `j` by piecewise-linear
    /// interpolation in `t`.
    ///
    /// The returned driver answers for the single volatility `z_j` it was
    /// recovered at (the `z` argument is not interpolated); it exists to
    /// feed the closed-form solver when predicting oracle values.
    pub fn column_generator(&self, j: usize) -> Result<Generator> {
        if j >= self.z_set.len() {
            return Err(Error::InvalidArgument(format!("no column {j}")));
        }
        let ts = self.grid.points().to_vec();
        let vals: Vec<Vec<f64>> = self.values.iter().map(|row| row[j].clone()).collect();
        let n = vals[0].len();
        let d = self.z_set[j].cols();
        let breakpoints = ts[1..ts.len() - 1].to_vec();
        let horizon = self.grid.horizon();
        let name = format!("table-column(j={j}, |z|={:.4})", self.z_set[j].norm());
        Generator::custom(
            name,
            n,
            d,
            GeneratorMeta {
                lipschitz_y: 0.0,
                deterministic: true,
                y_independent: true,
                zero_at_zero: true,
                z_modulus: None,
            },
            breakpoints,
            move |t, _, _| {
                let t = t.clamp(0.0, horizon);
                let hi = ts.partition_point(|p| *p < t).clamp(1, ts.len() - 1);
                let (a, b) = (ts[hi - 1], ts[hi]);
                let w = (t - a) / (b - a);
                (0..n)
                    .map(|c| vals[hi - 1][c] + w * (vals[hi][c] - vals[hi - 1][c]))
                    .collect()
            },
        )
    }

    /// CSV serialization for scalar tables: header `t,z,g`.
    pub fn to_csv_string(&self) -> Result<String> {
        scalar_csv(&self.grid, &self.z_set, &self.values, "g")
    }
}

/// Pointwise recovery at an arbitrary time by Richardson-extrapolated
/// central differences, for oracles that answer off-grid windows. Needs
/// `0 ≤ t - δ` and `δ > 0`.
pub fn recover_generator_at(
    oracle: &dyn ExpectationOracle,
    t: f64,
    z: &MatrixZ,
    delta: f64,
) -> Result<Vec<f64>> {
    if !(delta > 0.0 && t - delta >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < δ ≤ t for central differences, got t={t}, δ={delta}"
        )));
    }
    let (n, _) = oracle.dims();
    let g_at = |w: f64| -> Result<Vec<f64>> {
        let central = |h: f64| -> Result<Vec<f64>> {
            let hi = oracle.eval_r(&RTerminal::new(vec![0.0; n], z.clone(), 0.0, t + h)?, 0.0)?;
            let lo = oracle.eval_r(&RTerminal::new(vec![0.0; n], z.clone(), 0.0, t - h)?, 0.0)?;
            Ok(hi
                .deterministic()
                .iter()
                .zip(lo.deterministic())
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect())
        };
        central(w)
    };
    let d1 = g_at(delta)?;
    let d2 = g_at(delta / 2.0)?;
    Ok(d1
        .iter()
        .zip(d2)
        .map(|(coarse, fine)| (4.0 * fine - coarse) / 3.0)
        .collect())
}

// ═══════════════════════════════════════════════════════════════════════
//  Necessity: reintegration must reproduce G
// ═══════════════════════════════════════════════════════════════════════

/// Per-column roundtrip diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundtripColumn {
    pub z_index: usize,
    pub z_norm: f64,
    /// Largest per-interval discrepancy away from the boundary regions.
    pub max_interior: f64,
    /// Largest discrepancy inside the boundary regions.
    pub endpoint: f64,
    /// Largest cumulative discrepancy `|∫_0^{t_i} ĝ - G(t_i)|`.
    pub cumulative_max: f64,
    /// Number of intervals assigned to the boundary region at each end.
    pub boundary_lo: usize,
    pub boundary_hi: usize,
    /// Set when a boundary region misses the tolerance the interior meets.
    /// One-sided end stencils are lower order, and integrable endpoint
    /// singularities of the driver surface the same way.
    pub endpoint_flag: bool,
}

/// Roundtrip report: trapezoid reintegration of a recovered table against
/// the sampled `G` it came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundtripReport {
    pub columns: Vec<RoundtripColumn>,
    pub tol: f64,
    /// True when every interior interval of every column reintegrates to
    /// within `tol`.
    pub pass: bool,
}

/// Reintegrates the recovered driver over each grid interval by the
/// trapezoid rule and compares increments with the sampled `G`.
///
/// The PASS verdict is decided on interior intervals. The boundary region
/// at each end covers at least the first/last interval (their stencils are
/// one-sided) and extends inward while discrepancies stay above tolerance
/// and decay monotonically — the signature of a driver that blows up at an
/// endpoint while remaining integrable — but never past a tenth of the
/// grid, so an interior fault cannot hide in it. Boundary discrepancies
/// are reported and flagged rather than failing the table.
pub fn roundtrip_necessity(
    gf: &GFunction,
    table: &GeneratorTable,
    tol: f64,
) -> Result<RoundtripReport> {
    if gf.grid != table.grid || gf.z_set.len() != table.z_set.len() {
        return Err(Error::InvalidArgument(
            "roundtrip requires the table recovered from these samples".into(),
        ));
    }
    let pts = gf.grid.points();
    if pts.len() < 4 {
        return Err(Error::GridTooCoarse(
            "roundtrip needs at least three intervals to have an interior".into(),
        ));
    }
    let n_intervals = pts.len() - 1;
    let cap = ((n_intervals as f64 * 0.1).ceil() as usize).max(1);
    let n = gf.values[0][0].len();
    let mut columns = Vec::with_capacity(gf.z_set.len());
    for j in 0..gf.z_set.len() {
        let mut gaps = vec![0.0_f64; n_intervals];
        let mut cumulative_max = 0.0_f64;
        for c in 0..n {
            let mut cum = 0.0;
            for (i, gap) in gaps.iter_mut().enumerate() {
                let dt = pts[i + 1] - pts[i];
                let inc = 0.5 * dt * (table.values[i][j][c] + table.values[i + 1][j][c]);
                let g_inc = gf.values[i + 1][j][c] - gf.values[i][j][c];
                *gap = gap.max((inc - g_inc).abs());
                cum += inc;
                cumulative_max = cumulative_max.max((cum - gf.values[i + 1][j][c]).abs());
            }
        }
        let decaying_run = |idx: &mut dyn Iterator<Item = usize>| -> usize {
            let mut len = 0;
            let mut prev = f64::INFINITY;
            for i in idx.take(cap) {
                if gaps[i] <= tol || gaps[i] > prev * 1.05 {
                    break;
                }
                prev = gaps[i];
                len += 1;
            }
            len.max(1)
        };
        let boundary_lo = decaying_run(&mut (0..n_intervals));
        let boundary_hi = decaying_run(&mut (0..n_intervals).rev());
        let mut max_interior = 0.0_f64;
        let mut endpoint = 0.0_f64;
        for (i, &gap) in gaps.iter().enumerate() {
            if i < boundary_lo || i >= n_intervals - boundary_hi {
                endpoint = endpoint.max(gap);
            } else {
                max_interior = max_interior.max(gap);
            }
        }
        columns.push(RoundtripColumn {
            z_index: j,
            z_norm: gf.z_set[j].norm(),
            max_interior,
            endpoint,
            cumulative_max,
            boundary_lo,
            boundary_hi,
            endpoint_flag: endpoint > tol && max_interior <= tol,
        });
    }
    let pass = columns.iter().all(|c| c.max_interior <= tol);
    Ok(RoundtripReport { columns, tol, pass })
}

// ═══════════════════════════════════════════════════════════════════════
//  Sufficiency: the table must predict the oracle
// ═══════════════════════════════════════════════════════════════════════

/// One disagreement between oracle and prediction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyWitness {
    pub t: f64,
    pub u: f64,
    pub v: f64,
    pub y: Vec<f64>,
    pub z_index: usize,
    pub expected: Vec<f64>,
    pub got: Vec<f64>,
    pub gap: f64,
}

/// Result of replaying sampled terminals through the recovered table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub samples: usize,
    pub max_gap: f64,
    pub tol: f64,
    pub seed: u64,
    pub witnesses: Vec<VerifyWitness>,
    pub pass: bool,
}

/// Predicts conditional values from the recovered table and compares them
/// with the oracle on `samples` random terminals per `z` column.
///
/// Deterministic parts must agree within `tol`; stochastic parts must agree
/// structurally (same increment window, same matrix). Witness inputs are
/// recorded in full so any failure replays from the report alone.
pub fn verify_representation_on_r(
    oracle: &dyn ExpectationOracle,
    table: &GeneratorTable,
    samples: usize,
    seed: u64,
    tol: f64,
) -> Result<VerifyReport> {
    let horizon = table.grid.horizon();
    let (n, _) = oracle.dims();
    let mut u_rng = UniformStream::new(seed);
    let mut max_gap = 0.0_f64;
    let mut witnesses = Vec::new();
    let mut count = 0usize;

    for j in 0..table.z_set.len() {
        let column = table.column_generator(j)?;
        for _ in 0..samples {
            let y: Vec<f64> = (0..n).map(|_| u_rng.next_in(-2.0, 2.0)).collect();
            let a = u_rng.next_in(0.0, horizon);
            let b = u_rng.next_in(0.0, horizon);
            let (u, v) = if a <= b { (a, b) } else { (b, a) };
            // Conditioning times hit all three branches, including t > v.
            let t = u_rng.next_in(0.0, 1.1 * horizon);
            let xi = RTerminal::new(y.clone(), table.z_set[j].clone(), u, v)?;

            let got = oracle.eval_r(&xi, t)?;
            let expected = cond_gexp_R(&column, &xi, t, QUAD_TOL)?;
            count += 1;

            let det_gap = expected
                .deterministic()
                .iter()
                .zip(got.deterministic())
                .map(|(e, g)| (e - g).abs())
                .fold(0.0, f64::max);
            let structural_ok = expected.stochastic() == got.stochastic();
            max_gap = max_gap.max(det_gap);
            if det_gap > tol || !structural_ok {
                if witnesses.len() < 32 {
                    witnesses.push(VerifyWitness {
                        t,
                        u,
                        v,
                        y,
                        z_index: j,
                        expected: expected.deterministic().to_vec(),
                        got: got.deterministic().to_vec(),
                        gap: if structural_ok {
                            det_gap
                        } else {
                            f64::INFINITY
                        },
                    });
                } else {
                    witnesses.push(VerifyWitness {
                        t,
                        u,
                        v,
                        y,
                        z_index: j,
                        expected: vec![],
                        got: vec![],
                        gap: det_gap,
                    });
                }
            }
        }
    }
    let pass = witnesses.is_empty();
    Ok(VerifyReport {
        samples: count,
        max_gap,
        tol,
        seed,
        witnesses,
        pass,
    })
}

// ═══════════════════════════════════════════════════════════════════════
//  Comparing two oracles through their drivers
// ═══════════════════════════════════════════════════════════════════════

/// Ordering verdict for a pair of oracles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConverseVerdict {
    /// Drivers agree everywhere sampled.
    Equal,
    /// The first driver dominates the second everywhere sampled.
    FirstDominates,
    /// The second driver dominates the first everywhere sampled.
    SecondDominates,
    /// Strict violations exist in both directions.
    Incomparable,
}

/// A node where one recovered driver strictly exceeds the other.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderWitness {
    pub t: f64,
    pub z_index: usize,
    pub z_norm: f64,
    pub first: f64,
    pub second: f64,
}

/// Report of a driver-level comparison with its value-level cross-check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConverseReport {
    pub verdict: ConverseVerdict,
    /// Interior nodes where the first driver strictly exceeds the second.
    pub first_over_second: Vec<OrderWitness>,
    /// Interior nodes where the second strictly exceeds the first.
    pub second_over_first: Vec<OrderWitness>,
    /// Whether directly sampled values ordered the same way as the verdict.
    pub values_agree: bool,
    pub tol: f64,
}

/// Recovers both drivers on a shared grid × z-set, orders them at interior
/// nodes, and cross-checks the verdict against directly compared values.
///
/// The value check replays each driver-level witness as a short-window
/// terminal around the witness time, so a genuine crossing always shows up
/// in values too; `values_agree = false` therefore signals an oracle that
/// is not actually driven by any single driver.
pub fn converse_compare(
    first: &dyn ExpectationOracle,
    second: &dyn ExpectationOracle,
    grid: &TimeGrid,
    z_set: &[MatrixZ],
    tol: f64,
) -> Result<ConverseReport> {
    if first.dims() != second.dims() {
        return Err(Error::InvalidArgument(format!(
            "oracle dimensions differ: {:?} vs {:?}",
            first.dims(),
            second.dims()
        )));
    }
    let table_a = recover_generator(&sample_G(first, grid, z_set)?)?;
    let table_b = recover_generator(&sample_G(second, grid, z_set)?)?;
    let pts = grid.points();
    let n = first.dims().0;

    let mut first_over_second = Vec::new();
    let mut second_over_first = Vec::new();
    for (j, zj) in z_set.iter().enumerate() {
        for (i, &t) in pts.iter().enumerate().take(pts.len() - 1).skip(1) {
            for c in 0..n {
                let (a, b) = (table_a.value(i, j)[c], table_b.value(i, j)[c]);
                let w = OrderWitness {
                    t,
                    z_index: j,
                    z_norm: zj.norm(),
                    first: a,
                    second: b,
                };
                if a > b + tol {
                    first_over_second.push(w);
                } else if b > a + tol {
                    second_over_first.push(w);
                }
            }
        }
    }
    let verdict = match (first_over_second.is_empty(), second_over_first.is_empty()) {
        (true, true) => ConverseVerdict::Equal,
        (false, true) => ConverseVerdict::FirstDominates,
        (true, false) => ConverseVerdict::SecondDominates,
        (false, false) => ConverseVerdict::Incomparable,
    };

    // Value-level cross-check: windows around witness times (or generic
    // windows when there is no witness) must order values the same way.
    let value_gap = |z: &MatrixZ, lo: f64, hi: f64| -> Result<Vec<f64>> {
        let xi = RTerminal::new(vec![0.0; n], z.clone(), lo, hi)?;
        let va = first.eval_r(&xi, 0.0)?;
        let vb = second.eval_r(&xi, 0.0)?;
        Ok(va
            .deterministic()
            .iter()
            .zip(vb.deterministic())
            .map(|(x, y)| x - y)
            .collect())
    };
    let mut probes: Vec<(f64, usize)> = Vec::new();
    for w in first_over_second.iter().chain(&second_over_first) {
        probes.push((w.t, w.z_index));
    }
    if probes.is_empty() {
        for j in 0..z_set.len() {
            probes.push((0.5 * grid.horizon(), j));
        }
    }
    let mut saw_a_over_b = false;
    let mut saw_b_over_a = false;
    let window = grid.horizon() / (2 * grid.steps()) as f64;
    for (t, j) in probes {
        let lo = (t - window).max(0.0);
        let hi = (t + window).min(grid.horizon());
        let gaps = value_gap(&z_set[j], lo, hi)?;
        let span = hi - lo;
        for gap in gaps {
            if gap > tol * span {
                saw_a_over_b = true;
            }
            if -gap > tol * span {
                saw_b_over_a = true;
            }
        }
    }
    let values_agree = match verdict {
        ConverseVerdict::Equal => !saw_a_over_b && !saw_b_over_a,
        ConverseVerdict::FirstDominates => saw_a_over_b && !saw_b_over_a,
        ConverseVerdict::SecondDominates => saw_b_over_a && !saw_a_over_b,
        ConverseVerdict::Incomparable => saw_a_over_b && saw_b_over_a,
    };
    Ok(ConverseReport {
        verdict,
        first_over_second,
        second_over_first,
        values_agree,
        tol,
    })
}

// ═══════════════════════════════════════════════════════════════════════
//  Z sampling and scalar CSV exchange
// ═══════════════════════════════════════════════════════════════════════

/// Builds a z sample set inside the Frobenius ball of radius `k`: per-entry
/// axis grids (`±k·l/per_axis` on every matrix position) plus `random`
/// uniformly directed matrices with radii spread over `(0, k]`.
pub fn make_z_set(
    n: usize,
    d: usize,
    k: f64,
    per_axis: usize,
    random: usize,
    seed: u64,
) -> Result<Vec<MatrixZ>> {
    if !(k.is_finite() && k > 0.0) || per_axis == 0 {
        return Err(Error::InvalidArgument(format!(
            "need a positive radius and per-axis count, got k={k}, per_axis={per_axis}"
        )));
    }
    let mut out = Vec::new();
    for pos in 0..n * d {
        for l in 1..=per_axis {
            let r = k * l as f64 / per_axis as f64;
            for sign in [1.0, -1.0] {
                let mut entries = vec![0.0; n * d];
                entries[pos] = sign * r;
                out.push(MatrixZ::new(n, d, entries)?);
            }
        }
    }
    let mut u = UniformStream::new(seed);
    for _ in 0..random {
        let raw: Vec<f64> = (0..n * d).map(|_| u.next_in(-1.0, 1.0)).collect();
        let norm = raw.iter().map(|e| e * e).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let radius = k * (0.05 + 0.95 * u.next_f64());
        out.push(MatrixZ::new(
            n,
            d,
            raw.iter().map(|e| e * radius / norm).collect(),
        )?);
    }
    Ok(out)
}

fn scalar_csv(
    grid: &TimeGrid,
    z_set: &[MatrixZ],
    values: &[Vec<Vec<f64>>],
    value_name: &str,
) -> Result<String> {
    if z_set.iter().any(|z| z.rows() != 1 || z.cols() != 1) {
        return Err(Error::InvalidArgument(
            "CSV exchange is defined for scalar (1x1) tables; use JSON for systems".into(),
        ));
    }
    let mut out = format!("t,z,{value_name}\n");
    for (i, &t) in grid.points().iter().enumerate() {
        for (j, z) in z_set.iter().enumerate() {
            out.push_str(&format!("{t},{},{}\n", z.entries()[0], values[i][j][0]));
        }
    }
    Ok(out)
}

type ScalarCsv = (TimeGrid, Vec<f64>, Vec<Vec<f64>>);

fn parse_scalar_csv(text: &str, value_name: &str) -> Result<ScalarCsv> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty CSV".into()))?;
    let expected = format!("t,z,{value_name}");
    if header.trim() != expected {
        return Err(Error::InvalidArgument(format!(
            "CSV header must be {expected:?}, got {header:?}"
        )));
    }
    let mut ts: Vec<f64> = Vec::new();
    let mut zs: Vec<f64> = Vec::new();
    let mut cells: Vec<(usize, usize, f64)> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let parts: Vec<&str> = line.trim().split(',').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "CSV line {} has {} fields, expected 3",
                lineno + 2,
                parts.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| {
                Error::InvalidArgument(format!("bad number {s:?} on CSV line {}", lineno + 2))
            })
        };
        let (t, z, v) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
        let ti = position_or_insert(&mut ts, t);
        let zi = position_or_insert(&mut zs, z);
        cells.push((ti, zi, v));
    }
    ts_sorted(&ts)?;
    let grid = TimeGrid::from_points(ts.clone())?;
    let mut rows = vec![vec![f64::NAN; zs.len()]; ts.len()];
    for (ti, zi, v) in cells {
        rows[ti][zi] = v;
    }
    if rows.iter().flatten().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument(
            "CSV table is ragged: every (t, z) pair needs a value".into(),
        ));
    }
    Ok((grid, zs, rows))
}

fn position_or_insert(xs: &mut Vec<f64>, x: f64) -> usize {
    match xs.iter().position(|v| *v == x) {
        Some(i) => i,
        None => {
            xs.push(x);
            xs.len() - 1
        }
    }
}

fn ts_sorted(ts: &[f64]) -> Result<()> {
    if ts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "CSV times must appear in strictly increasing order".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{builtin_generator, BuiltinGenerator};
    use crate::grid::make_uniform_grid;

    fn oracle_for(kind: BuiltinGenerator) -> GOracle {
        GOracle::new(builtin_generator(kind).unwrap()).unwrap()
    }

    fn scalar_zs(entries: &[f64]) -> Vec<MatrixZ> {
        entries.iter().map(|&e| MatrixZ::scalar(e)).collect()
    }

    #[test]
    fn sampling_a_drift_oracle_gives_linear_g() {
        let oracle = oracle_for(BuiltinGenerator::LinearDrift { mu: 0.3, d: 1 });
        let grid = make_uniform_grid(1.0, 10).unwrap();
        let zs = scalar_zs(&[1.0, -2.0]);
        let gf = sample_G(&oracle, &grid, &zs).unwrap();
        // G(t, z) = 0.3 |z| t.
        for (i, &t) in grid.points().iter().enumerate() {
            assert!((gf.value(i, 0)[0] - 0.3 * t).abs() < 1e-12);
            assert!((gf.value(i, 1)[0] - 0.6 * t).abs() < 1e-12);
        }
    }

    #[test]
    fn recovery_is_a_fixed_point_for_builtins() {
        let grid = make_uniform_grid(1.0, 20).unwrap();
        let zs = scalar_zs(&[0.5, 1.0, -3.0]);
        for kind in [
            BuiltinGenerator::Zero { n: 1, d: 1 },
            BuiltinGenerator::LinearDrift { mu: 0.7, d: 1 },
            BuiltinGenerator::Quadratic {
                nu: 0.5,
                gamma: None,
                d: 1,
            },
        ] {
            let oracle = oracle_for(kind);
            let gf = sample_G(&oracle, &grid, &zs).unwrap();
            let table = recover_generator(&gf).unwrap();
            for (j, z) in zs.iter().enumerate() {
                assert!(!table.is_rough(j));
                let true_g = oracle.generator().eval(0.5, &[0.0], z).unwrap()[0];
                for i in 0..=grid.steps() {
                    // Time-constant drivers recover exactly at every node.
                    assert!(
                        (table.value(i, j)[0] - true_g).abs() < 1e-12,
                        "{} node {i}: {} vs {true_g}",
                        oracle.name(),
                        table.value(i, j)[0]
                    );
                }
            }
        }
    }

    #[test]
    fn quadratic_primitive_recovers_its_slope_everywhere_it_should() {
        // Oracle for g(t, z) = t ‖z‖: G(t, z) = t²‖z‖/2, centered
        // differences are exact for quadratics, ends are O(Δt).
        let meta = crate::generator::GeneratorMeta {
            lipschitz_y: 0.0,
            deterministic: true,
            y_independent: true,
            zero_at_zero: true,
            z_modulus: Some(crate::generator::ZModulus::constant(1.0)),
        };
        let g =
            Generator::custom("t|z|", 1, 1, meta, vec![], |t, _, z| vec![t * z.norm()]).unwrap();
        let oracle = GOracle::new(g).unwrap();
        let grid = make_uniform_grid(1.0, 1000).unwrap();
        let zs = scalar_zs(&[1.0]);
        let table = recover_generator(&sample_G(&oracle, &grid, &zs).unwrap()).unwrap();
        for i in 1..grid.steps() {
            let t = grid.node(i);
            assert!(
                (table.value(i, 0)[0] - t).abs() < 1e-6,
                "interior node {i}: {} vs {t}",
                table.value(i, 0)[0]
            );
        }
        // One-sided ends carry O(Δt) error: (G(h) - G(0))/h = h/2.
        assert!((table.value(0, 0)[0] - 0.0005).abs() < 1e-9);
    }

    #[test]
    fn roundtrip_closes_for_smooth_tables() {
        let oracle = oracle_for(BuiltinGenerator::Quadratic {
            nu: 0.5,
            gamma: None,
            d: 1,
        });
        let grid = make_uniform_grid(1.0, 16).unwrap();
        let zs = scalar_zs(&[1.0, 2.0]);
        let gf = sample_G(&oracle, &grid, &zs).unwrap();
        let table = recover_generator(&gf).unwrap();
        let report = roundtrip_necessity(&gf, &table, 1e-8).unwrap();
        assert!(report.pass);
        for col in &report.columns {
            assert!(col.cumulative_max < 1e-10, "{col:?}");
            assert!(!col.endpoint_flag);
        }
    }

    #[test]
    fn integrable_endpoint_singularities_flag_but_do_not_fail() {
        // G(t, z) = ‖z‖ √t: the derivative blows up at 0 but stays
        // integrable; interior intervals reintegrate fine.
        let grid = make_uniform_grid(1.0, 100).unwrap();
        let rows: Vec<Vec<f64>> = grid.points().iter().map(|t| vec![t.sqrt()]).collect();
        let gf = GFunction::from_scalar_rows(grid, &[1.0], rows).unwrap();
        let table = recover_generator(&gf).unwrap();
        assert!(table.is_rough(0), "√t curvature should flag roughness");
        let report = roundtrip_necessity(&gf, &table, 1e-4).unwrap();
        let col = &report.columns[0];
        assert!(col.max_interior <= 1e-4, "interior {}", col.max_interior);
        assert!(col.endpoint > 1e-4, "endpoint {}", col.endpoint);
        assert!(col.boundary_lo > 1, "singularity spans several cells");
        assert_eq!(col.boundary_hi, 1, "right end is regular");
        assert!(col.endpoint_flag);
        assert!(report.pass);
    }

    #[test]
    fn interior_faults_cannot_hide_in_the_boundary_region() {
        let grid = make_uniform_grid(1.0, 50).unwrap();
        let mut rows: Vec<Vec<f64>> = grid.points().iter().map(|t| vec![0.3 * t]).collect();
        rows[25][0] += 1e-3;
        let gf = GFunction::from_scalar_rows(grid, &[1.0], rows).unwrap();
        let table = recover_generator(&gf).unwrap();
        let report = roundtrip_necessity(&gf, &table, 1e-6).unwrap();
        assert!(!report.pass);
        assert!(report.columns[0].max_interior > 1e-6);
    }

    #[test]
    fn verification_replays_the_oracle_through_the_table() {
        let oracle = oracle_for(BuiltinGenerator::LinearDrift { mu: 0.4, d: 1 });
        let grid = make_uniform_grid(1.0, 16).unwrap();
        let zs = scalar_zs(&[0.5, 1.5, -2.0]);
        let table = recover_generator(&sample_G(&oracle, &grid, &zs).unwrap()).unwrap();
        let report = verify_representation_on_r(&oracle, &table, 40, 11, 1e-8).unwrap();
        assert!(report.pass, "max gap {}", report.max_gap);
        assert_eq!(report.samples, 120);
    }

    #[test]
    fn perturbed_oracles_fail_verification_with_the_bump_as_gap() {
        let oracle = oracle_for(BuiltinGenerator::LinearDrift { mu: 0.4, d: 1 });
        let grid = make_uniform_grid(1.0, 16).unwrap();
        let zs = scalar_zs(&[1.0]);
        let table = recover_generator(&sample_G(&oracle, &grid, &zs).unwrap()).unwrap();
        let bad = PerturbedOracle {
            inner: oracle,
            bump: 0.01,
            only_at_time_zero: false,
            skip_constants: false,
        };
        let report = verify_representation_on_r(&bad, &table, 40, 11, 1e-8).unwrap();
        assert!(!report.pass);
        assert!(
            (report.max_gap - 0.01).abs() < 1e-9,
            "max gap {}",
            report.max_gap
        );
        assert!(!report.witnesses.is_empty());
    }

    #[test]
    fn converse_orders_drift_oracles_by_mu() {
        let big = oracle_for(BuiltinGenerator::LinearDrift { mu: 0.6, d: 1 });
        let small = oracle_for(BuiltinGenerator::LinearDrift { mu: 0.5, d: 1 });
        let grid = make_uniform_grid(1.0, 10).unwrap();
        let zs = scalar_zs(&[0.5, 1.0, 2.0]);
        let report = converse_compare(&big, &small, &grid, &zs, 1e-9).unwrap();
        assert_eq!(report.verdict, ConverseVerdict::FirstDominates);
        assert!(report.values_agree);
        assert!(report.second_over_first.is_empty());

        let twin = oracle_for(BuiltinGenerator::LinearDrift { mu: 0.6, d: 1 });
        let report = converse_compare(&big, &twin, &grid, &zs, 1e-9).unwrap();
        assert_eq!(report.verdict, ConverseVerdict::Equal);
        assert!(report.values_agree);
    }

    #[test]
    fn drift_and_quadratic_cross_at_unit_radius() {
        // μ‖z‖ vs ν‖z‖² with μ = ν = 1: the first wins inside the unit
        // ball, the second outside, so the verdict is incomparable with
        // witnesses on both sides of ‖z‖ = 1.
        let lin = oracle_for(BuiltinGenerator::LinearDrift { mu: 1.0, d: 1 });
        let quad = oracle_for(BuiltinGenerator::Quadratic {
            nu: 1.0,
            gamma: None,
            d: 1,
        });
        let grid = make_uniform_grid(1.0, 10).unwrap();
        let zs = scalar_zs(&[0.5, 2.0]);
        let report = converse_compare(&lin, &quad, &grid, &zs, 1e-9).unwrap();
        assert_eq!(report.verdict, ConverseVerdict::Incomparable);
        assert!(report.values_agree);
        assert!(report.first_over_second.iter().all(|w| w.z_norm < 1.0));
        assert!(report.second_over_first.iter().all(|w| w.z_norm > 1.0));
    }

    #[test]
    fn g_zero_contract_is_enforced() {
        let oracle = oracle_for(BuiltinGenerator::LinearDrift { mu: 0.4, d: 1 });
        let bad = PerturbedOracle {
            inner: oracle,
            bump: 0.05,
            only_at_time_zero: false,
            skip_constants: false,
        };
        let grid = make_uniform_grid(1.0, 4).unwrap();
        let err = sample_G(&bad, &grid, &scalar_zs(&[1.0])).unwrap_err();
        assert!(matches!(err, Error::OracleContractViolation(_)));
    }

    #[test]
    fn pointwise_recovery_richardson() {
        let oracle = oracle_for(BuiltinGenerator::Quadratic {
            nu: 0.3,
            gamma: None,
            d: 1,
        });
        let g = recover_generator_at(&oracle, 0.5, &MatrixZ::scalar(2.0), 0.05).unwrap();
        assert!((g[0] - 1.2).abs() < 1e-10, "{}", g[0]);
    }

    #[test]
    fn scalar_csv_roundtrips() {
        let oracle = oracle_for(BuiltinGenerator::LinearDrift { mu: 0.4, d: 1 });
        let grid = make_uniform_grid(1.0, 4).unwrap();
        let zs = scalar_zs(&[1.0, -1.0]);
        let gf = sample_G(&oracle, &grid, &zs).unwrap();
        let text = gf.to_csv_string().unwrap();
        assert!(text.starts_with("t,z,G\n"));
        let back = GFunction::from_csv_string(&text).unwrap();
        for i in 0..=grid.steps() {
            for j in 0..zs.len() {
                assert_eq!(gf.value(i, j), back.value(i, j));
            }
        }
        assert!(GFunction::from_csv_string("nope\n1,2,3").is_err());
        assert!(GFunction::from_csv_string("t,z,G\n0,1,0\n0.5,1,bad").is_err());
    }

    #[test]
    fn z_sets_stay_inside_the_ball() {
        let zs = make_z_set(1, 2, 5.0, 3, 10, 9).unwrap();
        assert!(zs.iter().all(|z| z.norm() <= 5.0 + 1e-12));
        assert!(zs.iter().any(|z| (z.norm() - 5.0).abs() < 1e-12));
        assert!(zs.len() >= 2 * 2 * 3);
    }
}
