//! Deterministic quadrature and extrapolation utilities.
//!
//! Three tools cover every integral this crate computes outside of an ODE
//! solve: adaptive Simpson quadrature with explicit breakpoint splitting
//! (integrands are piecewise smooth with known kink locations), a
//! fourth-order cumulative integral on a fixed grid (for fixed-point
//! iterations that need `∫_t^T` at every node), and Neville extrapolation
//! to zero (for limits in a small parameter). Two stable exponential
//! helpers support stiff penalization limits without cancellation.

use crate::error::{Error, Result};

/// Default absolute tolerance for adaptive quadrature.
pub const QUAD_TOL: f64 = 1e-11;

const MAX_DEPTH: u32 = 48;

/// Adaptive Simpson integral of `f` over `[a, b]` to absolute tolerance
/// `tol`, splitting first at the supplied breakpoints so that each adaptive
/// panel sees a smooth integrand.
pub fn integrate(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    tol: f64,
) -> Result<f64> {
    let v = integrate_vec(&|t| vec![f(t)], a, b, breakpoints, tol, 1)?;
    Ok(v[0])
}

/// Vector-valued adaptive Simpson integral; the refinement criterion is the
/// maximum componentwise error.
pub fn integrate_vec(
    f: &dyn Fn(f64) -> Vec<f64>,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    tol: f64,
    dim: usize,
) -> Result<Vec<f64>> {
    if !(a.is_finite() && b.is_finite()) || b < a {
        return Err(Error::InvalidArgument(format!(
            "bad integration interval [{a}, {b}]"
        )));
    }
    let mut total = vec![0.0; dim];
    if a == b {
        return Ok(total);
    }
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&t| t > a && t < b)
        .collect();
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup();
    let mut edges = vec![a];
    edges.extend(cuts);
    edges.push(b);

    let n_panels = (edges.len() - 1) as f64;
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let flo = f(lo);
        let fmid = f(0.5 * (lo + hi));
        let fhi = f(hi);
        if flo.len() != dim || fmid.len() != dim || fhi.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "integrand returned wrong dimension (expected {dim})"
            )));
        }
        let whole = simpson(lo, hi, &flo, &fmid, &fhi);
        let piece = adapt(
            f,
            lo,
            hi,
            &flo,
            &fmid,
            &fhi,
            &whole,
            tol / n_panels,
            MAX_DEPTH,
        );
        for (t, p) in total.iter_mut().zip(piece) {
            *t += p;
        }
    }
    if total.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "integrand produced a non-finite integral".into(),
        ));
    }
    Ok(total)
}

fn simpson(a: f64, b: f64, fa: &[f64], fm: &[f64], fb: &[f64]) -> Vec<f64> {
    let h = (b - a) / 6.0;
    fa.iter()
        .zip(fm)
        .zip(fb)
        .map(|((x, y), z)| h * (x + 4.0 * y + z))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn adapt(
    f: &dyn Fn(f64) -> Vec<f64>,
    a: f64,
    b: f64,
    fa: &[f64],
    fm: &[f64],
    fb: &[f64],
    whole: &[f64],
    tol: f64,
    depth: u32,
) -> Vec<f64> {
    let m = 0.5 * (a + b);
    let fl = f(0.5 * (a + m));
    let fr = f(0.5 * (m + b));
    let left = simpson(a, m, fa, &fl, fm);
    let right = simpson(m, b, fm, &fr, fb);
    let err = left
        .iter()
        .zip(&right)
        .zip(whole)
        .map(|((l, r), w)| (l + r - w).abs())
        .fold(0.0, f64::max);
    if depth == 0 || err <= 15.0 * tol {
        // Richardson correction: halving Simpson gains a factor 16.
        return left
            .iter()
            .zip(&right)
            .zip(whole)
            .map(|((l, r), w)| l + r + (l + r - w) / 15.0)
            .collect();
    }
    let lo = adapt(f, a, m, fa, &fl, fm, &left, tol / 2.0, depth - 1);
    let hi = adapt(f, m, b, fm, &fr, fb, &right, tol / 2.0, depth - 1);
    lo.iter().zip(hi).map(|(x, y)| x + y).collect()
}

/// Cumulative integral `I_i = ∫_{t_0}^{t_i} f ds` from node values on an
/// arbitrary strictly increasing grid, with fourth-order global accuracy.
///
/// Each interval integrates the cubic through the four nearest nodes
/// (clipped at the ends), evaluated exactly by two-point Gauss–Legendre.
/// Grids with fewer than four nodes fall back to the interpolating
/// polynomial through all of them.
pub fn cumulative_integral(ts: &[f64], fs: &[f64]) -> Vec<f64> {
    assert_eq!(ts.len(), fs.len(), "grid and values must align");
    let n = ts.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    let width = (n - 1).min(3);
    for j in 0..n - 1 {
        // Stencil of `width + 1` nodes around interval j, clipped in range.
        let lo = j.saturating_sub(1).min(n - 1 - width);
        let stencil = lo..lo + width + 1;
        let (a, b) = (ts[j], ts[j + 1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let x1 = mid - half / 3.0_f64.sqrt();
        let x2 = mid + half / 3.0_f64.sqrt();
        let p1 = lagrange_eval(&ts[stencil.clone()], &fs[stencil.clone()], x1);
        let p2 = lagrange_eval(&ts[stencil.clone()], &fs[stencil], x2);
        out[j + 1] = out[j] + half * (p1 + p2);
    }
    out
}

fn lagrange_eval(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for k in 0..xs.len() {
        let mut w = ys[k];
        for l in 0..xs.len() {
            if l != k {
                w *= (x - xs[l]) / (xs[k] - xs[l]);
            }
        }
        acc += w;
    }
    acc
}

/// Neville extrapolation of `(x_i, y_i)` data to `x = 0`.
///
/// Used to send a small parameter (an interval width, an inverse penalty) to
/// its limit from a handful of decreasing values.
pub fn extrapolate_to_zero(points: &[(f64, f64)]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("extrapolation needs data".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let mut tableau: Vec<f64> = points.iter().map(|p| p.1).collect();
    let n = tableau.len();
    for level in 1..n {
        for i in 0..n - level {
            let (x0, x1) = (xs[i], xs[i + level]);
            if x0 == x1 {
                return Err(Error::InvalidArgument(
                    "extrapolation abscissae must be distinct".into(),
                ));
            }
            tableau[i] = ((0.0 - x1) * tableau[i] - (0.0 - x0) * tableau[i + 1]) / (x0 - x1);
        }
    }
    Ok(tableau[0])
}

/// Stable evaluation of `(1 - e^{-x}) / x` for `x ≥ 0`, with the limit `1`
/// at zero.
pub fn em1_over(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// Stable evaluation of `(1 - (1 + x) e^{-x}) / x²` for `x ≥ 0`; the limit
/// at zero is `1/2`. Direct evaluation cancels catastrophically for small
/// `x`, so a truncated alternating series takes over below a threshold.
pub fn poisson2(x: f64) -> f64 {
    if x > 0.05 {
        return (1.0 - (1.0 + x) * (-x).exp()) / (x * x);
    }
    // Series Σ_{k≥0} (-x)^k (k+1)/(k+2)! = 1/2 - x/3 + x²/8 - x³/30 + …
    let mut term = 1.0; // (-x)^k
    let mut acc = 0.0;
    let mut factorial = 2.0; // (k+2)!
    for k in 0..12u32 {
        acc += term * (k as f64 + 1.0) / factorial;
        term *= -x;
        factorial *= k as f64 + 3.0;
    }
    acc
}
