use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mwaddr::coupling::assemble;
use mwaddr::geometry::reference_two_zone_layout;
use mwaddr::nulling::{solve_addressed_only, solve_minimum_norm};
use mwaddr::robustness::monte_carlo_drift;
use mwaddr::{DriftModel, FieldTarget, PhasorVector3, RatioProbe, MU0};
use num_complex::Complex64;

fn target() -> PhasorVector3 {
    PhasorVector3::new(Complex64::new(MU0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0))
}

fn solvers(c: &mut Criterion) {
    let layout = reference_two_zone_layout();
    let m = assemble(&layout).unwrap();
    let t = FieldTarget::addressed_with_nulls(2, 1, target()).unwrap();

    c.bench_function("assemble reference layout", |b| b.iter(|| assemble(black_box(&layout)).unwrap()));
    c.bench_function("minimum-norm solve", |b| b.iter(|| solve_minimum_norm(black_box(&m), &t).unwrap()));
    c.bench_function("addressed-only solve", |b| {
        b.iter(|| solve_addressed_only(black_box(&m), 1, target(), 2).unwrap())
    });

    let s = solve_minimum_norm(&m, &t).unwrap();
    let probe = RatioProbe { addressed: 1, neighbor: 2, axis: layout.quant_axis() };
    let drift = DriftModel::uniform(8, 1e-3, 0.1f64.to_radians()).unwrap();
    let mut g = c.benchmark_group("monte carlo");
    g.sample_size(10);
    g.bench_function("10k samples", |b| {
        b.iter(|| monte_carlo_drift(&m, &s.currents, &drift, probe, 10_000, 0).unwrap())
    });
    g.finish();
}

criterion_group!(benches, solvers);
criterion_main!(benches);
