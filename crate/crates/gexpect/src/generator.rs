//! Drivers `g(t, y, z)` with declared structural metadata.
//!
//! A driver maps `[0, T] × R^n × R^{n×d}` to `R^n`. The algorithms in this
//! crate branch on structure — whether `g` depends on `y`, vanishes at
//! `z = 0`, or admits a local Lipschitz modulus in `z` — so each
//! [`Generator`] carries that structure as explicit metadata alongside the
//! evaluation closure. Declared metadata is a contract: it is spot-checked
//! by sampling, and routines that rely on a flag refuse generators that do
//! not declare it.
//!
//! The built-in family covers the drivers used throughout the test suite
//! and the command line: the zero driver, drift bounds `±μ‖z‖`, a quadratic
//! driver `ν‖z‖² + γ(t)` with an optional piecewise-constant rate, and a
//! componentwise wrapper for systems.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::matrix::MatrixZ;
use crate::rng::UniformStream;
use crate::step::StepProcess;

/// Local Lipschitz modulus in `z`: a nondecreasing `ρ` with
/// `‖g(t,y,z₁) - g(t,y,z₂)‖ ≤ ρ(‖z₁‖ ∨ ‖z₂‖) ‖z₁ - z₂‖`.
#[derive(Clone)]
pub struct ZModulus(Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl ZModulus {
    /// Constant modulus `ρ(r) = c` (a globally Lipschitz driver).
    pub fn constant(c: f64) -> Self {
        Self(Arc::new(move |_| c))
    }

    /// Linear modulus `ρ(r) = slope · r`, the natural choice for quadratic
    /// growth in `z`.
    pub fn linear(slope: f64) -> Self {
        Self(Arc::new(move |r| slope * r))
    }

    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn eval(&self, r: f64) -> f64 {
        (self.0)(r)
    }
}

impl fmt::Debug for ZModulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ZModulus(ρ(1)={}, ρ(5)={})",
            self.eval(1.0),
            self.eval(5.0)
        )
    }
}

/// Structural facts a driver declares about itself.
#[derive(Debug, Clone)]
pub struct GeneratorMeta {
    /// Lipschitz constant in `y`: `‖g(t,y₁,z) - g(t,y₂,z)‖ ≤ μ ‖y₁ - y₂‖`.
    pub lipschitz_y: f64,
    /// True when the driver is a deterministic function of `(t, y, z)`;
    /// explicit solvers require this.
    pub deterministic: bool,
    /// True when the driver ignores `y`.
    pub y_independent: bool,
    /// True when `g(t, y, 0) = 0` for all `t, y`.
    pub zero_at_zero: bool,
    /// Local Lipschitz modulus in `z`, when one is declared.
    pub z_modulus: Option<ZModulus>,
}

type EvalFn = dyn Fn(f64, &[f64], &MatrixZ) -> Vec<f64> + Send + Sync;

/// A driver together with its dimensions, metadata, and the interior time
/// breakpoints at which it may jump (integration grids absorb these).
#[derive(Clone)]
pub struct Generator {
    name: String,
    n: usize,
    d: usize,
    time_breakpoints: Vec<f64>,
    meta: GeneratorMeta,
    eval: Arc<EvalFn>,
}

impl fmt::Debug for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Generator")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("d", &self.d)
            .field("meta", &self.meta)
            .finish()
    }
}

/// Built-in driver descriptions accepted by [`builtin_generator`].
#[derive(Debug, Clone)]
pub enum BuiltinGenerator {
    /// `g ≡ 0` in dimensions `n × d`.
    Zero { n: usize, d: usize },
    /// `g(t, y, z) = μ ‖z‖` (scalar-valued; `μ ≥ 0`).
    LinearDrift { mu: f64, d: usize },
    /// `g(t, y, z) = -μ ‖z‖` (scalar-valued; `μ ≥ 0`).
    NegativeDrift { mu: f64, d: usize },
    /// `g(t, y, z) = ν ‖z‖² + γ(t)` with an optional scalar step rate `γ`.
    Quadratic {
        nu: f64,
        gamma: Option<StepProcess>,
        d: usize,
    },
    /// Componentwise map: row `i` of the output applies the `i`-th scalar
    /// driver to `(t, y_i, z_{i·})`.
    ScaledComponent { rows: Vec<Generator> },
}

/// Constructs a built-in driver, validating parameters.
pub fn builtin_generator(kind: BuiltinGenerator) -> Result<Generator> {
    match kind {
        BuiltinGenerator::Zero { n, d } => {
            check_dims(n, d)?;
            Ok(Generator {
                name: "zero".into(),
                n,
                d,
                time_breakpoints: vec![],
                meta: GeneratorMeta {
                    lipschitz_y: 0.0,
                    deterministic: true,
                    y_independent: true,
                    zero_at_zero: true,
                    z_modulus: Some(ZModulus::constant(0.0)),
                },
                eval: Arc::new(move |_, _, _| vec![0.0; n]),
            })
        }
        BuiltinGenerator::LinearDrift { mu, d } => drift(mu, d, 1.0),
        BuiltinGenerator::NegativeDrift { mu, d } => drift(mu, d, -1.0),
        BuiltinGenerator::Quadratic { nu, gamma, d } => {
            check_dims(1, d)?;
            check_param("nu", nu)?;
            if let Some(g) = &gamma {
                if g.rows() != 1 || g.cols() != 1 {
                    return Err(Error::InvalidArgument(
                        "the rate γ must be a scalar step process".into(),
                    ));
                }
            }
            let gamma_is_zero = gamma
                .as_ref()
                .is_none_or(|g| g.values().iter().all(|v| v.is_zero()));
            let name = match &gamma {
                Some(_) if !gamma_is_zero => format!("quadratic(nu={nu})+gamma"),
                _ => format!("quadratic(nu={nu})"),
            };
            let time_breakpoints = gamma
                .as_ref()
                .map(|g| g.interior_breakpoints().to_vec())
                .unwrap_or_default();
            Ok(Generator {
                name,
                n: 1,
                d,
                time_breakpoints,
                meta: GeneratorMeta {
                    lipschitz_y: 0.0,
                    deterministic: true,
                    y_independent: true,
                    zero_at_zero: gamma_is_zero,
                    z_modulus: Some(ZModulus::linear(2.0 * nu)),
                },
                eval: Arc::new(move |t, _, z| {
                    let rate = gamma.as_ref().map_or(0.0, |g| g.value_at(t).entries()[0]);
                    let zn = z.norm();
                    vec![nu * zn * zn + rate]
                }),
            })
        }
        BuiltinGenerator::ScaledComponent { rows } => scaled_component(rows),
    }
}

fn drift(mu: f64, d: usize, sign: f64) -> Result<Generator> {
    check_dims(1, d)?;
    check_param("mu", mu)?;
    let name = if sign > 0.0 {
        format!("linear_drift(mu={mu})")
    } else {
        format!("negative_drift(mu={mu})")
    };
    Ok(Generator {
        name,
        n: 1,
        d,
        time_breakpoints: vec![],
        meta: GeneratorMeta {
            lipschitz_y: 0.0,
            deterministic: true,
            y_independent: true,
            zero_at_zero: true,
            z_modulus: Some(ZModulus::constant(mu)),
        },
        eval: Arc::new(move |_, _, z| vec![sign * mu * z.norm()]),
    })
}

fn scaled_component(rows: Vec<Generator>) -> Result<Generator> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument(
            "componentwise drivers need at least one row".into(),
        ));
    }
    let d = rows[0].d;
    if rows.iter().any(|r| r.n != 1 || r.d != d) {
        return Err(Error::InvalidArgument(
            "all rows must be scalar drivers over the same Brownian dimension".into(),
        ));
    }
    let n = rows.len();
    let mut time_breakpoints: Vec<f64> = rows
        .iter()
        .flat_map(|r| r.time_breakpoints.iter().copied())
        .collect();
    time_breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
    time_breakpoints.dedup();
    let meta = GeneratorMeta {
        lipschitz_y: rows.iter().map(|r| r.meta.lipschitz_y).fold(0.0, f64::max),
        deterministic: rows.iter().all(|r| r.meta.deterministic),
        y_independent: rows.iter().all(|r| r.meta.y_independent),
        zero_at_zero: rows.iter().all(|r| r.meta.zero_at_zero),
        z_modulus: rows
            .iter()
            .map(|r| r.meta.z_modulus.clone())
            .collect::<Option<Vec<_>>>()
            .map(|mods| {
                ZModulus::custom(move |r| mods.iter().map(|m| m.eval(r)).fold(0.0, f64::max))
            }),
    };
    let name = format!(
        "scaled_component[{}]",
        rows.iter()
            .map(|r| r.name.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    );
    let row_evals: Vec<Generator> = rows;
    Ok(Generator {
        name,
        n,
        d,
        time_breakpoints,
        meta,
        eval: Arc::new(move |t, y, z| {
            row_evals
                .iter()
                .enumerate()
                .map(|(i, r)| (r.eval)(t, &y[i..=i], &z.row_matrix(i))[0])
                .collect()
        }),
    })
}

fn check_dims(n: usize, d: usize) -> Result<()> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument(format!(
            "driver dimensions must be positive, got n={n}, d={d}"
        )));
    }
    Ok(())
}

fn check_param(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "{name} must be finite, got {v}"
        )));
    }
    if v < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "{name} must be nonnegative, got {v}"
        )));
    }
    Ok(())
}

impl Generator {
    /// Wraps a caller-supplied driver with declared metadata. The
    /// declaration is taken on trust here; [`Generator::validate_metadata`]
    /// spot-checks it by sampling.
    pub fn custom(
        name: impl Into<String>,
        n: usize,
        d: usize,
        meta: GeneratorMeta,
        time_breakpoints: Vec<f64>,
        eval: impl Fn(f64, &[f64], &MatrixZ) -> Vec<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        check_dims(n, d)?;
        check_param("lipschitz_y", meta.lipschitz_y)?;
        Ok(Self {
            name: name.into(),
            n,
            d,
            time_breakpoints,
            meta,
            eval: Arc::new(eval),
        })
    }

    /// Evaluates the driver, validating argument shapes and that the output
    /// is finite.
    pub fn eval(&self, t: f64, y: &[f64], z: &MatrixZ) -> Result<Vec<f64>> {
        if y.len() != self.n {
            return Err(Error::InvalidArgument(format!(
                "driver {} expects y of length {}, got {}",
                self.name,
                self.n,
                y.len()
            )));
        }
        if z.rows() != self.n || z.cols() != self.d {
            return Err(Error::InvalidArgument(format!(
                "driver {} expects z of shape {}x{}, got {}x{}",
                self.name,
                self.n,
                self.d,
                z.rows(),
                z.cols()
            )));
        }
        let out = (self.eval)(t, y, z);
        if out.len() != self.n || out.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "driver {} produced an invalid value at t={t}",
                self.name
            )));
        }
        Ok(out)
    }

    /// Scalar evaluation for one-dimensional drivers.
    pub fn eval_scalar(&self, t: f64, y: f64, z: &MatrixZ) -> Result<f64> {
        if self.n != 1 {
            return Err(Error::InvalidArgument(format!(
                "driver {} is {}-dimensional, not scalar",
                self.name, self.n
            )));
        }
        Ok(self.eval(t, &[y], z)?[0])
    }

    /// The driver rebased to a window starting at `offset`: the result
    /// evaluates `g(offset + s, y, z)` for `s ∈ [0, horizon]`, with jump
    /// times shifted and clipped accordingly. Metadata is unchanged.
    pub fn shift_time(&self, offset: f64, horizon: f64) -> Generator {
        let inner = self.eval.clone();
        let time_breakpoints = self
            .time_breakpoints
            .iter()
            .map(|b| b - offset)
            .filter(|b| *b > 0.0 && *b < horizon)
            .collect();
        Generator {
            name: format!("{}@t+{offset}", self.name),
            n: self.n,
            d: self.d,
            time_breakpoints,
            meta: self.meta.clone(),
            eval: Arc::new(move |s, y, z| inner(offset + s, y, z)),
        }
    }

    /// The negated driver `-g`, preserving dimensions, breakpoints, and
    /// metadata (Lipschitz bounds and the zero-at-zero property are
    /// symmetric under sign change).
    pub fn negated(&self) -> Generator {
        let inner = self.eval.clone();
        Generator {
            name: format!("neg({})", self.name),
            n: self.n,
            d: self.d,
            time_breakpoints: self.time_breakpoints.clone(),
            meta: self.meta.clone(),
            eval: Arc::new(move |t, y, z| inner(t, y, z).into_iter().map(|v| -v).collect()),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Solution dimension `n`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Brownian dimension `d`.
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn meta(&self) -> &GeneratorMeta {
        &self.meta
    }

    /// Interior times where the driver may jump in `t`.
    pub fn time_breakpoints(&self) -> &[f64] {
        &self.time_breakpoints
    }

    /// Spot-checks the declared metadata on `samples` random tuples with
    /// `t ∈ [0, horizon]` and entries of `y`, `z` in `[-5, 5]`.
    ///
    /// Verifies, where declared: `g(t, y, 0) = 0`, independence from `y`,
    /// the Lipschitz bound in `y`, and the local Lipschitz modulus in `z`.
    /// The first violation aborts with a description of the offending tuple.
    pub fn validate_metadata(&self, horizon: f64, samples: usize, seed: u64) -> Result<()> {
        let mut u = UniformStream::new(seed);
        let slack_rel = 1e-9;
        let slack_abs = 1e-10;
        for k in 0..samples {
            let t = u.next_in(0.0, horizon);
            let y1: Vec<f64> = (0..self.n).map(|_| u.next_in(-5.0, 5.0)).collect();
            let y2: Vec<f64> = (0..self.n).map(|_| u.next_in(-5.0, 5.0)).collect();
            let z1 = random_z(self.n, self.d, &mut u);
            let z2 = random_z(self.n, self.d, &mut u);

            if self.meta.zero_at_zero {
                let g0 = self.eval(t, &y1, &MatrixZ::zeros(self.n, self.d))?;
                let norm = vec_norm(&g0);
                if norm > slack_abs {
                    return Err(Error::MetadataViolation(format!(
                        "{} declares g(t,y,0)=0 but |g|={norm:.3e} at t={t} (sample {k})",
                        self.name
                    )));
                }
            }

            let g11 = self.eval(t, &y1, &z1)?;
            let g21 = self.eval(t, &y2, &z1)?;
            let dy = vec_norm(&sub(&y1, &y2));
            let dg_y = vec_norm(&sub(&g11, &g21));
            if self.meta.y_independent && dg_y > slack_abs {
                return Err(Error::MetadataViolation(format!(
                    "{} declares y-independence but |Δg|={dg_y:.3e} for |Δy|={dy:.3e} at t={t}",
                    self.name
                )));
            }
            if dg_y > self.meta.lipschitz_y * dy * (1.0 + slack_rel) + slack_abs {
                return Err(Error::MetadataViolation(format!(
                    "{} declares Lipschitz-in-y bound {} but |Δg|={dg_y:.3e} for |Δy|={dy:.3e}",
                    self.name, self.meta.lipschitz_y
                )));
            }

            if let Some(rho) = &self.meta.z_modulus {
                let g12 = self.eval(t, &y1, &z2)?;
                let dz = z1.sub(&z2)?.norm();
                let bound = rho.eval(z1.norm().max(z2.norm())) * dz;
                let dg_z = vec_norm(&sub(&g11, &g12));
                if dg_z > bound * (1.0 + slack_rel) + slack_abs {
                    return Err(Error::MetadataViolation(format!(
                        "{} declares a z-modulus but |Δg|={dg_z:.3e} exceeds ρ·|Δz|={bound:.3e} \
                         at t={t}, |z1|={:.3}, |z2|={:.3}",
                        self.name,
                        z1.norm(),
                        z2.norm()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn random_z(n: usize, d: usize, u: &mut UniformStream) -> MatrixZ {
    let entries = (0..n * d).map(|_| u.next_in(-5.0, 5.0)).collect();
    MatrixZ::new(n, d, entries).expect("entries are finite by construction")
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z1(v: f64) -> MatrixZ {
        MatrixZ::scalar(v)
    }

    #[test]
    fn linear_drift_scales_the_frobenius_norm() {
        let g = builtin_generator(BuiltinGenerator::LinearDrift { mu: 0.5, d: 1 }).unwrap();
        assert_eq!(g.eval_scalar(0.3, 7.0, &z1(2.0)).unwrap(), 1.0);
        assert_eq!(g.eval_scalar(0.3, 7.0, &z1(-2.0)).unwrap(), 1.0);

        let g2 = builtin_generator(BuiltinGenerator::LinearDrift { mu: 0.5, d: 2 }).unwrap();
        let z = MatrixZ::new(1, 2, vec![3.0, 4.0]).unwrap();
        assert_eq!(g2.eval_scalar(0.0, 0.0, &z).unwrap(), 2.5);
    }

    #[test]
    fn negative_drift_is_the_mirror_image() {
        let g = builtin_generator(BuiltinGenerator::NegativeDrift { mu: 0.5, d: 1 }).unwrap();
        assert_eq!(g.eval_scalar(0.0, 0.0, &z1(2.0)).unwrap(), -1.0);
    }

    #[test]
    fn quadratic_with_step_rate() {
        let gamma = StepProcess::from_segments(
            vec![0.0, 0.5, 1.0],
            vec![MatrixZ::scalar(0.1), MatrixZ::scalar(0.3)],
        )
        .unwrap();
        let g = builtin_generator(BuiltinGenerator::Quadratic {
            nu: 0.5,
            gamma: Some(gamma),
            d: 1,
        })
        .unwrap();
        assert_eq!(g.eval_scalar(0.2, 0.0, &z1(2.0)).unwrap(), 2.1);
        assert_eq!(g.eval_scalar(0.7, 0.0, &z1(2.0)).unwrap(), 2.3);
        assert_eq!(g.time_breakpoints(), &[0.5]);
        assert!(!g.meta().zero_at_zero);

        let plain = builtin_generator(BuiltinGenerator::Quadratic {
            nu: 0.5,
            gamma: None,
            d: 1,
        })
        .unwrap();
        assert!(plain.meta().zero_at_zero);
        assert_eq!(plain.eval_scalar(0.0, 1.0, &z1(2.0)).unwrap(), 2.0);
    }

    #[test]
    fn negative_parameters_are_rejected() {
        assert!(builtin_generator(BuiltinGenerator::LinearDrift { mu: -0.1, d: 1 }).is_err());
        assert!(builtin_generator(BuiltinGenerator::Quadratic {
            nu: -1.0,
            gamma: None,
            d: 1
        })
        .is_err());
        assert!(builtin_generator(BuiltinGenerator::LinearDrift { mu: f64::NAN, d: 1 }).is_err());
    }

    #[test]
    fn componentwise_driver_applies_rows_independently() {
        let rows = vec![
            builtin_generator(BuiltinGenerator::LinearDrift { mu: 0.5, d: 2 }).unwrap(),
            builtin_generator(BuiltinGenerator::Quadratic {
                nu: 1.0,
                gamma: None,
                d: 2,
            })
            .unwrap(),
        ];
        let g = builtin_generator(BuiltinGenerator::ScaledComponent { rows }).unwrap();
        assert_eq!(g.n(), 2);
        let z = MatrixZ::new(2, 2, vec![3.0, 4.0, 1.0, 0.0]).unwrap();
        let out = g.eval(0.0, &[0.0, 0.0], &z).unwrap();
        assert_eq!(out, vec![2.5, 1.0]);
        assert_eq!(g.meta().z_modulus.as_ref().unwrap().eval(1.0), 2.0);
    }

    #[test]
    fn negation_flips_values_and_keeps_metadata() {
        let g = builtin_generator(BuiltinGenerator::Quadratic {
            nu: 0.5,
            gamma: None,
            d: 1,
        })
        .unwrap()
        .negated();
        assert_eq!(g.eval_scalar(0.0, 0.0, &z1(2.0)).unwrap(), -2.0);
        assert!(g.meta().zero_at_zero);
        assert_eq!(g.name(), "neg(quadratic(nu=0.5))");
    }

    #[test]
    fn eval_validates_shapes() {
        let g = builtin_generator(BuiltinGenerator::LinearDrift { mu: 1.0, d: 2 }).unwrap();
        assert!(g.eval(0.0, &[1.0, 2.0], &MatrixZ::zeros(1, 2)).is_err());
        assert!(g.eval(0.0, &[1.0], &MatrixZ::zeros(1, 3)).is_err());
        assert!(g.eval(0.0, &[1.0], &MatrixZ::zeros(1, 2)).is_ok());
    }

    #[test]
    fn builtins_pass_their_own_metadata_checks() {
        let builtins = vec![
            builtin_generator(BuiltinGenerator::Zero { n: 2, d: 2 }).unwrap(),
            builtin_generator(BuiltinGenerator::LinearDrift { mu: 0.7, d: 2 }).unwrap(),
            builtin_generator(BuiltinGenerator::NegativeDrift { mu: 0.7, d: 2 }).unwrap(),
            builtin_generator(BuiltinGenerator::Quadratic {
                nu: 0.4,
                gamma: None,
                d: 2,
            })
            .unwrap(),
        ];
        for g in builtins {
            g.validate_metadata(1.0, 1000, 17).unwrap();
        }
    }

    #[test]
    fn metadata_lies_are_caught() {
        let meta_ok = GeneratorMeta {
            lipschitz_y: 0.0,
            deterministic: true,
            y_independent: true,
            zero_at_zero: true,
            z_modulus: None,
        };

        // Claims zero-at-zero but is offset by 1.
        let g = Generator::custom("offset", 1, 1, meta_ok.clone(), vec![], |_, _, z| {
            vec![z.norm() + 1.0]
        })
        .unwrap();
        assert!(matches!(
            g.validate_metadata(1.0, 1000, 5),
            Err(Error::MetadataViolation(_))
        ));

        // Claims y-independence but drifts with y.
        let g =
            Generator::custom("ydep", 1, 1, meta_ok.clone(), vec![], |_, y, _| vec![y[0]]).unwrap();
        assert!(matches!(
            g.validate_metadata(1.0, 1000, 5),
            Err(Error::MetadataViolation(_))
        ));

        // Declares a modulus that is too small for its slope in z.
        let mut meta = meta_ok;
        meta.z_modulus = Some(ZModulus::constant(0.5));
        let g =
            Generator::custom("steep", 1, 1, meta, vec![], |_, _, z| vec![2.0 * z.norm()]).unwrap();
        assert!(matches!(
            g.validate_metadata(1.0, 1000, 5),
            Err(Error::MetadataViolation(_))
        ));
    }
}
