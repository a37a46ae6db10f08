use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use gexpect::{
    default_m_schedule, entropic_value, evaluate_terminal, make_z_set, penalize_decompose,
    recover_generator, sample_G, simulate, solve_phi, GOracle, MatrixZ, SolveOptions,
};
use gexpect_bench::{bridge_terminal, drift, grid, indicator_step, quadratic, SEED};

fn bench_solve_phi(c: &mut Criterion) {
    let g = quadratic(0.5);
    let h = indicator_step(1.0, 0.2, 0.8);
    let mut group = c.benchmark_group("solve_phi");
    for steps in [64, 256] {
        let grid = grid(steps).with_breakpoints(&[0.2, 0.8]).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(steps), &grid, |b, grid| {
            b.iter(|| solve_phi(black_box(&g), &[0.0], &h, grid, SolveOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn bench_entropic(c: &mut Criterion) {
    let grid = grid(64).with_breakpoints(&[0.2, 0.8]).unwrap();
    let xi = bridge_terminal();
    let mut group = c.benchmark_group("entropic");
    for m in [10_000usize, 100_000] {
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, &m| {
            b.iter(|| {
                let batch = simulate(&grid, m, 1, SEED).unwrap();
                let payoff = evaluate_terminal(&batch, &xi).unwrap();
                entropic_value(black_box(0.5), None, &payoff).unwrap()
            })
        });
    }
    group.finish();
}

fn bench_penalize(c: &mut Criterion) {
    let g = drift(0.0);
    let schedule = default_m_schedule();
    let mut group = c.benchmark_group("penalize_decompose");
    for steps in [64, 256] {
        let grid = grid(steps);
        let psi: Vec<f64> = grid.points().iter().map(|&t| -t).collect();
        let z = MatrixZ::zeros(1, 1);
        group.bench_with_input(BenchmarkId::from_parameter(steps), &grid, |b, grid| {
            b.iter(|| penalize_decompose(black_box(&g), &psi, &z, grid, &schedule, 1e-6).unwrap())
        });
    }
    group.finish();
}

fn bench_recover(c: &mut Criterion) {
    let oracle = GOracle::new(drift(0.3)).unwrap();
    let grid = grid(64);
    let z_set = make_z_set(1, 1, 2.0, 8, 0, SEED).unwrap();
    let gf = sample_G(&oracle, &grid, &z_set).unwrap();
    c.bench_function("recover_generator/64x16", |b| {
        b.iter(|| recover_generator(black_box(&gf)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_solve_phi,
    bench_entropic,
    bench_penalize,
    bench_recover
);
criterion_main!(benches);
