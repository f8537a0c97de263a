use criterion::{criterion_group, criterion_main, Criterion};
use evload_bench::{evening_model, fine_day};
use evload_core::analytic::{expected_profile_uniform_closed_form, peak_time};
use evload_core::{expected_profile, DistributionSpec};
use std::hint::black_box;

fn expected(c: &mut Criterion) {
    let grid = fine_day();
    let uniform = evening_model(DistributionSpec::Uniform { c: 1.0, d: 11.0 });
    let rician = evening_model(DistributionSpec::Rician { nu: 4.4, sigma: 3.5 });
    let mut g = c.benchmark_group("expected_profile");
    g.sample_size(20);
    g.bench_function("uniform_numeric", |b| b.iter(|| expected_profile(black_box(&uniform), &grid).unwrap()));
    g.bench_function("uniform_closed_form", |b| {
        b.iter(|| expected_profile_uniform_closed_form(1.0, 19.0, 10f64.sqrt(), 1.0, 11.0, black_box(&grid)).unwrap())
    });
    g.bench_function("rician_numeric", |b| b.iter(|| expected_profile(black_box(&rician), &grid).unwrap()));
    g.bench_function("peak_time_uniform", |b| b.iter(|| peak_time(black_box(&uniform), &grid).unwrap()));
    g.finish();
}

criterion_group!(benches, expected);
criterion_main!(benches);
