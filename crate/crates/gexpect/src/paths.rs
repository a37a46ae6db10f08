//! Brownian path batches and Monte Carlo reductions.
//!
//! A [`PathBatch`] stores per-step increments for `m` independent
//! `d`-dimensional Brownian paths on a fixed grid. Increments are generated
//! by the counter-based scheme in [`crate::rng`], so a batch is a pure
//! function of `(seed, grid, m, d)`: filling in parallel, re-running on a
//! different machine, or regenerating a single path all produce identical
//! bits. Reductions use a fixed pairwise summation order for the same
//! reason — seeded results are reproducible to the last bit, not just in
//! distribution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::rng::{self, pairwise_sum};
use crate::terminal::RTerminal;

/// Environment variable that overrides the run seed (decimal 64-bit).
pub const SEED_ENV_VAR: &str = "GEXPECT_SEED";

/// Seed used when neither the environment nor the caller provides one.
pub const DEFAULT_SEED: u64 = 42;

/// Default cap on batch memory (increments only), in bytes.
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 30;

/// Resolves the effective seed: the `GEXPECT_SEED` environment variable
/// wins over an explicitly configured seed, which wins over the default.
/// A malformed environment value is an error rather than a silent fallback.
pub fn resolve_seed(configured: Option<u64>) -> Result<u64> {
    match std::env::var(SEED_ENV_VAR) {
        Ok(raw) => raw.trim().parse::<u64>().map_err(|_| {
            Error::InvalidArgument(format!(
                "{SEED_ENV_VAR} must be a decimal 64-bit integer, got {raw:?}"
            ))
        }),
        Err(_) => Ok(configured.unwrap_or(DEFAULT_SEED)),
    }
}

/// `m` simulated Brownian paths on a shared grid, stored as per-step
/// increments in path-major order.
#[derive(Debug, Clone)]
pub struct PathBatch {
    grid: TimeGrid,
    m: usize,
    d: usize,
    seed: u64,
    increments: Vec<f64>,
}

/// Simulates a batch under the default memory budget.
pub fn simulate(grid: &TimeGrid, m: usize, d: usize, seed: u64) -> Result<PathBatch> {
    simulate_with_budget(grid, m, d, seed, DEFAULT_MEMORY_BUDGET)
}

/// Simulates a batch, failing with a resource-limit error when the
/// increment storage would exceed `budget_bytes`.
pub fn simulate_with_budget(
    grid: &TimeGrid,
    m: usize,
    d: usize,
    seed: u64,
    budget_bytes: usize,
) -> Result<PathBatch> {
    if m == 0 || d == 0 {
        return Err(Error::InvalidArgument(format!(
            "need at least one path and one Brownian dimension, got m={m}, d={d}"
        )));
    }
    let steps = grid.steps();
    let doubles = m
        .checked_mul(steps)
        .and_then(|x| x.checked_mul(d))
        .ok_or_else(|| Error::ResourceLimit("path count overflows".into()))?;
    let bytes = doubles
        .checked_mul(std::mem::size_of::<f64>())
        .ok_or_else(|| Error::ResourceLimit("path count overflows".into()))?;
    if bytes > budget_bytes {
        return Err(Error::ResourceLimit(format!(
            "batch needs {bytes} bytes of increments, budget is {budget_bytes}"
        )));
    }

    let sqrt_dt: Vec<f64> = (0..steps).map(|j| grid.dt(j).sqrt()).collect();
    let mut increments = vec![0.0; doubles];
    increments
        .par_chunks_mut(steps * d)
        .enumerate()
        .for_each(|(p, chunk)| {
            for j in 0..steps {
                for c in 0..d {
                    chunk[j * d + c] =
                        sqrt_dt[j] * rng::normal(seed, &[p as u64, j as u64, c as u64], 0);
                }
            }
        });
    Ok(PathBatch {
        grid: grid.clone(),
        m,
        d,
        seed,
        increments,
    })
}

impl PathBatch {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Increment of path `p` over grid step `j`, as a `d`-vector.
    ///
    /// # Panics
    /// Panics if `p` or `j` is out of range.
    pub fn increment(&self, p: usize, j: usize) -> &[f64] {
        assert!(p < self.m && j < self.grid.steps());
        let base = (p * self.grid.steps() + j) * self.d;
        &self.increments[base..base + self.d]
    }

    /// Brownian increment `B_{t_j} - B_{t_i}` of path `p`, summed over the
    /// intervening steps (`i ≤ j` as node indices).
    pub fn increment_between(&self, p: usize, i: usize, j: usize) -> Vec<f64> {
        assert!(i <= j && j <= self.grid.steps());
        let mut acc = vec![0.0; self.d];
        for step in i..j {
            for (a, b) in acc.iter_mut().zip(self.increment(p, step)) {
                *a += b;
            }
        }
        acc
    }

    /// Brownian value `B_{t_i}` of path `p` (paths start at zero).
    pub fn brownian_at(&self, p: usize, i: usize) -> Vec<f64> {
        self.increment_between(p, 0, i)
    }
}

/// Evaluates `ξ = y + z (B_v - B_u)` on every path of a batch, for scalar
/// terminals (`n = 1`). The window endpoints must be grid nodes; snapping
/// is a separate, explicit operation.
pub fn evaluate_terminal(batch: &PathBatch, xi: &RTerminal) -> Result<Vec<f64>> {
    if xi.n() != 1 {
        return Err(Error::InvalidArgument(format!(
            "pathwise evaluation of vector terminals uses evaluate_terminal_components \
             (terminal has n={})",
            xi.n()
        )));
    }
    Ok(evaluate_terminal_components(batch, xi)?
        .into_iter()
        .map(|v| v[0])
        .collect())
}

/// Vector version of [`evaluate_terminal`]: one `n`-vector per path.
pub fn evaluate_terminal_components(batch: &PathBatch, xi: &RTerminal) -> Result<Vec<Vec<f64>>> {
    if xi.d() != batch.d() {
        return Err(Error::InvalidArgument(format!(
            "terminal has d={}, batch has d={}",
            xi.d(),
            batch.d()
        )));
    }
    let iu = batch.grid().require_node(xi.u())?;
    let iv = batch.grid().require_node(xi.v())?;
    let mut out = Vec::with_capacity(batch.m());
    for p in 0..batch.m() {
        let db = batch.increment_between(p, iu, iv);
        let zdb = xi.z().apply(&db)?;
        out.push(xi.y().iter().zip(zdb).map(|(a, b)| a + b).collect());
    }
    Ok(out)
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Mean and standard error of `transform(value)` over all samples, using
/// deterministic pairwise summation. Any non-finite transformed sample is
/// an error carrying the count of bad values.
pub fn mc_mean(values: &[f64], transform: impl Fn(f64) -> f64) -> Result<MCEstimate> {
    let transformed: Vec<f64> = values.iter().map(|v| transform(*v)).collect();
    let bad = transformed.iter().filter(|v| !v.is_finite()).count();
    if bad > 0 {
        return Err(Error::NonFiniteSamples {
            bad,
            total: transformed.len(),
        });
    }
    mc_mean_finite(&transformed)
}

/// Like [`mc_mean`] but tolerates a small fraction of non-finite samples,
/// dropping them and reporting how many were dropped. Fails once the bad
/// fraction exceeds `max_bad_fraction`.
pub fn mc_mean_dropping(
    values: &[f64],
    transform: impl Fn(f64) -> f64,
    max_bad_fraction: f64,
) -> Result<(MCEstimate, usize)> {
    let transformed: Vec<f64> = values.iter().map(|v| transform(*v)).collect();
    let finite: Vec<f64> = transformed
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .collect();
    let bad = transformed.len() - finite.len();
    if (bad as f64) > max_bad_fraction * transformed.len() as f64 || finite.is_empty() {
        return Err(Error::NonFiniteSamples {
            bad,
            total: transformed.len(),
        });
    }
    Ok((mc_mean_finite(&finite)?, bad))
}

fn mc_mean_finite(xs: &[f64]) -> Result<MCEstimate> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("cannot average zero samples".into()));
    }
    let m = xs.len();
    let mean = pairwise_sum(xs) / m as f64;
    let std_error = if m > 1 {
        let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        (pairwise_sum(&sq) / ((m - 1) as f64 * m as f64)).sqrt()
    } else {
        0.0
    };
    Ok(MCEstimate {
        mean,
        std_error,
        samples: m,
    })
}
