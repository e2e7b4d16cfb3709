use std::f64::consts::E;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use num_complex::Complex64;
use vofrac::dtn::laplace_dtn_with;
use vofrac::inverse::{laplace_dataset, unit_drives};
use vofrac::resolvent::verify_bound_with;
use vofrac::{invert_all, l1_solve, solve_forward, ContourOptions, FitOptions, FluxStencil, L1Options, ShiftedSolver, Source};
use vofrac_bench::{bump, phantom};

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward_1d");
    for cells in [32, 64, 128] {
        let (op, f) = phantom(1, cells);
        let u0 = bump(&op);
        g.bench_with_input(BenchmarkId::new("contour", cells), &cells, |b, _| {
            b.iter(|| solve_forward(&op, &f, &u0, &Source::Zero, &[0.1, 0.5, 1.0], &ContourOptions::default()).unwrap())
        });
    }
    let (op, f) = phantom(1, 64);
    let u0 = bump(&op);
    g.sample_size(10);
    g.bench_function("l1_dt_1e-3", |b| {
        b.iter(|| l1_solve(&op, &f, &u0, &Source::Zero, 1e-3, 1.0, &L1Options::default()).unwrap())
    });
    g.finish();
}

fn resolvent(c: &mut Criterion) {
    let (op, f) = phantom(1, 64);
    let solver = ShiftedSolver::new(&op, &f).unwrap();
    c.bench_function("verify_bound_1d_64", |b| {
        b.iter(|| verify_bound_with(&solver, Complex64::from_polar(3.0, 2.0)).unwrap())
    });
}

fn dtn(c: &mut Criterion) {
    let (op, f) = phantom(2, 9);
    let solver = ShiftedSolver::new(&op, &f).unwrap();
    let mut g = vec![0.0; op.grid().n_boundary()];
    g[op.grid().s_in()[5]] = 1.0;
    c.bench_function("laplace_dtn_2d_8x8", |b| {
        b.iter(|| laplace_dtn_with(&solver, Complex64::new(1.0, 0.5), &g, 0, FluxStencil::SecondOrder).unwrap())
    });
}

fn inverse(c: &mut Criterion) {
    let (op, f) = phantom(2, 9);
    let drives = unit_drives(&op);
    let data = [1e-6, 1.0, E].map(|p| laplace_dataset(&op, &f, p, &drives, FluxStencil::SecondOrder).unwrap());
    let mut g = c.benchmark_group("inverse");
    g.sample_size(10);
    g.bench_function("invert_all_2d_8x8", |b| {
        b.iter(|| invert_all(&data, &op, &FitOptions::default()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, forward, resolvent, dtn, inverse);
criterion_main!(benches);
