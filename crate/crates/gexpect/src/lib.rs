//! Nonlinear conditional expectations driven by backward stochastic
//! differential equations.
//!
//! A driver `g(t, y, z)` induces a nonlinear expectation operator: the
//! time-`t` value of a terminal payoff is the first component of the
//! solution to a backward equation with that driver. This crate works the
//! correspondence in both directions, restricted to the regimes where it is
//! explicitly computable:
//!
//! * **Forward** ([`solver`]): closed-form conditional values on
//!   single-increment terminals `y + z (B_v - B_u)`, backward-ODE solutions
//!   when the volatility is prescribed, and Monte Carlo entropic values for
//!   quadratic drivers.
//! * **Backward** ([`recover`]): extracting the driver from a black-box
//!   expectation oracle by differentiating increment values in time, with
//!   necessity and fixed-point verification.
//! * **Structure** ([`decompose`]): fixed-point solves of the deterministic
//!   reduction, supermartingale tests, and the penalization limit that
//!   splits a supermartingale into a martingale part and a nondecreasing
//!   compensator.
//! * **Audit** ([`checks`]): sampled verification of the operator axioms,
//!   comparison and domination inequalities, and the equivalence between
//!   driver-level and operator-level convexity properties.
//!
//! Everything is deterministic given a seed: randomness is counter-based
//! ([`rng`]), reductions use a fixed summation order, and seeded runs
//! reproduce bit-for-bit across thread counts.

pub mod checks;
pub mod decompose;
pub mod error;
pub mod generator;
pub mod grid;
pub mod matrix;
pub mod paths;
pub mod quad;
pub mod recover;
pub mod rng;
pub mod solver;
pub mod step;
pub mod terminal;

pub use checks::{
    check_axioms, check_comparison, check_convexity_suite, check_domination,
    check_meanfield_comparison, check_structure, CheckConfig, PropertyReport, Subcheck, Verdict,
    Witness,
};
pub use decompose::{
    check_supermartingale, default_m_schedule, penalize_decompose, penalized_path, picard_solve,
    representation_pair, DecompositionResult, DriverF, PenalizedPath, PicardSolution,
    RepresentationPair, SupermartingaleReport, SupermartingaleWitness,
};
pub use error::{Error, Result};
pub use generator::{builtin_generator, BuiltinGenerator, Generator, GeneratorMeta, ZModulus};
pub use grid::{make_uniform_grid, TimeGrid};
pub use matrix::MatrixZ;
pub use paths::{
    evaluate_terminal, evaluate_terminal_components, mc_mean, resolve_seed, simulate,
    simulate_with_budget, MCEstimate, PathBatch, DEFAULT_SEED, SEED_ENV_VAR,
};
pub use recover::{
    converse_compare, make_z_set, recover_generator, recover_generator_at, roundtrip_necessity,
    sample_G, verify_representation_on_r, ConverseReport, ConverseVerdict, ExpectationOracle,
    GFunction, GOracle, GeneratorTable, OrderWitness, PerturbedOracle, RoundtripColumn,
    RoundtripReport, VerifyReport, VerifyWitness,
};
pub use solver::{
    cond_gexp_R, entropic_value, invariant_representation, meanfield_solution, solve_phi,
    EntropicEstimate, InvariantRepresentation, MeanFieldSolution, PhiFunction, RConditionalValue,
    SolveOptions, StochasticIncrement,
};
pub use step::StepProcess;
pub use terminal::RTerminal;

/// Crate version string, embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
