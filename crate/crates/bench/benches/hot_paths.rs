use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use pipf_bench::{aggressive_touchdown, unit_model, window_setup};
use pipf_core::{
    fit_boundary, integrate_step, solve_iteration, vertical_feasibility, ControlInput,
};

fn bench_dynamics_step(c: &mut Criterion) {
    let params = unit_model();
    let x0 = aggressive_touchdown(&params);
    let u = ControlInput { force: 1.5, torque: -0.8 };
    c.bench_function("integrate_step", |b| {
        b.iter(|| integrate_step(black_box(&x0), black_box(&u), 0.01, &params).unwrap())
    });
}

fn bench_window_solve(c: &mut Criterion) {
    let params = unit_model();
    let (x0, horizon, cost, constraints) = window_setup(&params);
    let mut group = c.benchmark_group("trajopt");
    group.sample_size(10);
    group.bench_function("solve_window_cold", |b| {
        b.iter_batched(
            || (),
            |_| {
                solve_iteration(
                    black_box(&x0),
                    &horizon,
                    &cost,
                    &constraints,
                    None,
                    &params,
                )
                .unwrap()
            },
            BatchSize::PerIteration,
        )
    });
    group.finish();
}

fn bench_feasibility(c: &mut Criterion) {
    let params = unit_model();
    let x0 = aggressive_touchdown(&params);
    c.bench_function("vertical_feasibility", |b| {
        b.iter(|| vertical_feasibility(black_box(&x0), &params, 2.0).unwrap())
    });
}

fn bench_fit_boundary(c: &mut Criterion) {
    let points: Vec<(f64, f64)> = (0..100)
        .map(|i| {
            let x = 0.8 + 0.012 * i as f64;
            (x, 7.3 - 2.3 * x + 0.05 * (i as f64).sin())
        })
        .collect();
    c.bench_function("fit_boundary_100", |b| {
        b.iter(|| fit_boundary(black_box(&points)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_dynamics_step,
    bench_window_solve,
    bench_feasibility,
    bench_fit_boundary
);
criterion_main!(benches);
