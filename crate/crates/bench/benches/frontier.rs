use std::hint::black_box;

use breakdown::bootstrap::{bootstrap_draws, min_area_band, SigmaMode};
use breakdown::empirical::{estimate_theta, OverlapPolicy};
use breakdown::minarea::{solve, DEFAULT_NODE_LIMIT};
use breakdown::montecarlo::{dgp_sample, study_grid, McDgp};
use breakdown::rng::rng_from_seed;
use breakdown::smoothing::{smoothed_frontier, SmoothingConfig};
use breakdown::{Claim, FrontierEngine};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;

fn frontier(c: &mut Criterion) {
    let engine = FrontierEngine::default();
    let grid = study_grid(50, 0.45);
    let claims = [Claim::dte(0.0, 0.25), Claim::dte(0.0, 0.9)];
    let mut group = c.benchmark_group("frontier");
    for n in [500usize, 5_000, 50_000] {
        let ds = dgp_sample(&McDgp::default(), n, 1).unwrap();
        let ce = estimate_theta(&ds).unwrap().with_propensity_guard(0.45, 1e-6).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &ce, |b, ce| {
            b.iter(|| engine.frontiers(black_box(ce), &claims, &grid).unwrap())
        });
    }
    group.finish();
}

fn smoothed(c: &mut Criterion) {
    let engine = FrontierEngine::default();
    let grid = study_grid(50, 0.45);
    let ds = dgp_sample(&McDgp::default(), 500, 2).unwrap();
    let ce = estimate_theta(&ds).unwrap().with_propensity_guard(0.45, 1e-6).unwrap();
    let claim = Claim::dte(0.0, 0.5);
    let cfg = SmoothingConfig::default();
    c.bench_function("smoothed_frontier/500", |b| {
        b.iter(|| smoothed_frontier(&engine, black_box(&ce), &claim, &grid, &cfg).unwrap())
    });
}

fn band(c: &mut Criterion) {
    let engine = FrontierEngine::default();
    let grid = study_grid(50, 0.45);
    let ds = dgp_sample(&McDgp::default(), 500, 3).unwrap();
    let ce = estimate_theta(&ds).unwrap().with_propensity_guard(0.45, 1e-6).unwrap();
    let claims = [Claim::dte(0.0, 0.25)];
    let mut group = c.benchmark_group("band");
    group.sample_size(10);
    group.bench_function("draws_b100", |b| {
        b.iter(|| {
            bootstrap_draws(&engine, &ds, &ce, &claims, &grid, &[2.0], 100, 7, OverlapPolicy::Redraw)
                .unwrap()
        })
    });
    let run =
        bootstrap_draws(&engine, &ds, &ce, &claims, &grid, &[2.0], 200, 7, OverlapPolicy::Redraw)
            .unwrap();
    group.bench_function("min_area_b200", |b| {
        b.iter(|| {
            min_area_band(
                &run.base[0],
                black_box(&run.sets[0].draws[0]),
                0.05,
                500,
                SigmaMode::EstimatedMinArea,
                DEFAULT_NODE_LIMIT,
            )
            .unwrap()
        })
    });
    group.finish();
}

fn minarea(c: &mut Criterion) {
    let mut rng = rng_from_seed(9);
    let draws: Vec<Vec<f64>> = (0..200)
        .map(|_| (0..50).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let w = vec![0.01; 50];
    c.bench_function("minarea/random_200x50", |b| {
        b.iter(|| solve(black_box(&draws), &w, 10, &[], DEFAULT_NODE_LIMIT))
    });
}

criterion_group!(benches, frontier, smoothed, band, minarea);
criterion_main!(benches);
