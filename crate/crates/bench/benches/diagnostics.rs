use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use tslab::diagnostics::{acf, durbin_watson, knn_jaccard, sliced_wasserstein, wasserstein1_1d, wasserstein1_exact};
use tslab_bench::{ar1, uniform};

fn residuals(c: &mut Criterion) {
    let e = ar1(10_000, 0.5, 1);
    c.bench_function("durbin_watson/10k", |b| b.iter(|| durbin_watson(black_box(&e)).unwrap()));
    c.bench_function("acf/10k_lag40", |b| b.iter(|| acf(black_box(&e), 40).unwrap()));
}

fn transport(c: &mut Criterion) {
    let x = ar1(4096, 0.0, 2);
    let y = ar1(4096, 0.9, 3);
    c.bench_function("w1_1d/4096", |b| b.iter(|| wasserstein1_1d(black_box(&x), black_box(&y)).unwrap()));
    let mut g = c.benchmark_group("w1_exact");
    g.sample_size(10);
    for n in [16, 64, 128] {
        let (a, b2) = (uniform(n, 16, 4), uniform(n, 16, 5));
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| wasserstein1_exact(&a, &b2).unwrap()));
    }
    g.finish();
    let (a, b2) = (uniform(512, 32, 6), uniform(512, 32, 7));
    c.bench_function("w1_sliced/512x32", |b| b.iter(|| sliced_wasserstein(&a, &b2, 64, 0).unwrap()));
}

fn neighbours(c: &mut Criterion) {
    let a = uniform(256, 32, 8);
    let b2 = &a + &(uniform(256, 32, 9) * 0.1);
    c.bench_function("knn_jaccard/256_k10", |b| b.iter(|| knn_jaccard(&a, &b2, 10).unwrap()));
}

criterion_group!(benches, residuals, transport, neighbours);
criterion_main!(benches);
