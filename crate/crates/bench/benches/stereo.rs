use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mcstereo::lookup::{multi_peak_lookup, LookupSource};
use mcstereo::pipeline::{run, PipelineConfig};
use mcstereo::{build_correlation_volume, build_pyramid, FeatureExtractor};
use mcstereo_bench::fixture;

fn correlation(c: &mut Criterion) {
    let scene = fixture(256, 192);
    let census = FeatureExtractor::Census { window: 5 };
    let left = census.extract(&scene.left, 4).unwrap();
    let right = census.extract(&scene.right, 4).unwrap();
    let mut group = c.benchmark_group("correlation_volume");
    for d_max in [64, 192] {
        group.bench_with_input(BenchmarkId::from_parameter(d_max), &d_max, |b, &d| {
            b.iter(|| build_correlation_volume(&left, &right, d).unwrap())
        });
    }
    group.finish();
}

fn lookup(c: &mut Criterion) {
    let scene = fixture(256, 192);
    let census = FeatureExtractor::Census { window: 5 };
    let left = census.extract(&scene.left, 4).unwrap();
    let right = census.extract(&scene.right, 4).unwrap();
    let volume = build_correlation_volume(&left, &right, 192).unwrap();
    let pyramid = build_pyramid(&volume);
    let mut group = c.benchmark_group("multi_peak_lookup");
    for k in [1, 3] {
        group.bench_with_input(BenchmarkId::new("k", k), &k, |b, &k| {
            b.iter(|| multi_peak_lookup(LookupSource::Initial(&volume), k, 12, &pyramid).unwrap())
        });
    }
    group.finish();
}

fn pipeline(c: &mut Criterion) {
    let scene = fixture(256, 192);
    let cfg = PipelineConfig::default();
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    group.bench_function("null_updater_256x192", |b| {
        b.iter(|| run(&scene.left, &scene.right, &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, correlation, lookup, pipeline);
criterion_main!(benches);
