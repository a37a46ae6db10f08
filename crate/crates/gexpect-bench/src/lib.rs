//! Shared fixtures for the criterion benches: one place to build the
//! drivers, grids, and terminals the pipelines are timed against.

use gexpect::{
    builtin_generator, make_uniform_grid, BuiltinGenerator, Generator, MatrixZ, RTerminal,
    StepProcess, TimeGrid,
};

pub const SEED: u64 = 42;

pub fn quadratic(nu: f64) -> Generator {
    builtin_generator(BuiltinGenerator::Quadratic {
        nu,
        gamma: None,
        d: 1,
    })
    .expect("valid ν")
}

pub fn drift(mu: f64) -> Generator {
    builtin_generator(BuiltinGenerator::LinearDrift { mu, d: 1 }).expect("valid μ")
}

pub fn grid(steps: usize) -> TimeGrid {
    make_uniform_grid(1.0, steps).expect("valid grid")
}

pub fn bridge_terminal() -> RTerminal {
    RTerminal::new(vec![0.0], MatrixZ::scalar(1.0), 0.2, 0.8).expect("valid terminal")
}

pub fn indicator_step(z: f64, u: f64, v: f64) -> StepProcess {
    StepProcess::indicator(MatrixZ::scalar(z), u, v, 1.0).expect("valid step")
}
