use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mpirecon_core::direct::{filtered_inverse_projected, FilterKind};
use mpirecon_core::rsvd::{project_data, reduce_problem, rsvd};
use mpirecon_core::synth::{synth_operator, SpectrumSpec};
use mpirecon_core::{kaczmarz_solve, KaczmarzConfig, Matrix};

const ROWS: usize = 2000;
const COLS: usize = 400;
const ALPHA: f64 = 1e-2;

fn problem() -> (Matrix, Vec<f64>) {
    let a = synth_operator(ROWS, COLS, &SpectrumSpec::Algebraic { rate: 1.0 }, 7)
        .unwrap()
        .matrix;
    let x: Vec<f64> = (0..COLS).map(|j| ((j % 17) as f64 / 17.0).max(0.2)).collect();
    let y = a.matvec(&x);
    (a, y)
}

fn kaczmarz(c: &mut Criterion) {
    let (a, y) = problem();
    let mut g = c.benchmark_group("kaczmarz");
    g.sample_size(10);
    g.bench_function("full", |b| {
        let cfg = KaczmarzConfig::new(ALPHA);
        b.iter(|| kaczmarz_solve(black_box(&a), black_box(&y), &cfg).unwrap())
    });
    for k in [20, 100] {
        let f = rsvd(&a, k, 5, 0, 1).unwrap();
        let r = reduce_problem(&f, &y).unwrap();
        g.bench_with_input(BenchmarkId::new("reduced", k), &r, |b, r| {
            let cfg = KaczmarzConfig::new(ALPHA);
            b.iter(|| kaczmarz_solve(black_box(&r.b), black_box(&r.z), &cfg).unwrap())
        });
    }
    g.finish();
}

fn sketch(c: &mut Criterion) {
    let (a, _) = problem();
    let mut g = c.benchmark_group("rsvd");
    g.sample_size(10);
    for (k, q) in [(20, 0), (100, 0), (100, 2)] {
        g.bench_function(BenchmarkId::new(format!("k{k}"), q), |b| {
            b.iter(|| rsvd(black_box(&a), k, 5, q, 1).unwrap())
        });
    }
    g.finish();
}

fn filtered(c: &mut Criterion) {
    let (a, y) = problem();
    let mut g = c.benchmark_group("filtered_inverse");
    for k in [20, 100] {
        let f = rsvd(&a, k, 5, 0, 1).unwrap();
        let w = project_data(&f, &y);
        g.bench_with_input(BenchmarkId::from_parameter(k), &(f, w), |b, (f, w)| {
            b.iter(|| filtered_inverse_projected(f, black_box(w), ALPHA, FilterKind::Squared).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, kaczmarz, sketch, filtered);
criterion_main!(benches);
