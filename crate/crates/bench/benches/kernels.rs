use std::hint::black_box;

use asdflow_core::flow::{integrate_on_grid, uniform_grid, RhsVariant};
use asdflow_core::isomonodromy::default_z_grid;
use asdflow_core::spectral::build_quartic;
use asdflow_core::{curvature_block, flatness_residual, integrate, rhs, roots, MetricState, StepController};
use criterion::{criterion_group, criterion_main, Criterion};

fn generic() -> MetricState {
    MetricState::new(0.0, [0.7, 1.3, 2.2], [0.3, -0.4, 0.5], [0.2, 0.4, -0.3]).unwrap()
}

fn kernels(c: &mut Criterion) {
    let s = generic();
    let d = rhs(&s).unwrap();
    c.bench_function("rhs", |b| b.iter(|| rhs(black_box(&s))));
    c.bench_function("curvature_block", |b| b.iter(|| curvature_block(black_box(&s), black_box(&d))));
    let q = build_quartic(&s);
    c.bench_function("roots", |b| b.iter(|| roots(black_box(&q))));
}

fn runs(c: &mut Criterion) {
    let s = generic();
    let ctl = StepController::default();
    c.bench_function("integrate_0.2", |b| b.iter(|| integrate(black_box(&s), 0.2, &ctl)));
    let fine = StepController { rtol: 1e-13, atol: 1e-15, ..StepController::default() };
    let traj = integrate_on_grid(&s, &uniform_grid(0.0, 4e-5, 4), &fine, RhsVariant::Asd).unwrap();
    let grid = default_z_grid();
    c.bench_function("flatness_residual", |b| b.iter(|| flatness_residual(black_box(&traj), &grid)));
}

criterion_group!(benches, kernels, runs);
criterion_main!(benches);
