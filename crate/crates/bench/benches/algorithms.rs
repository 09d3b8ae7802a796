use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gridmine_bench::{blobs, session, stats_pair, sub_clusters, transactions, two_pass};
use gridmine_core::clustering::{aggregate, local_cluster, merge_stats, AggregationParams};
use gridmine_core::itemsets::{centralized, fdm_run, gfm_run, MiningParams};

fn merge(c: &mut Criterion) {
    let mut group = c.benchmark_group("merge_stats");
    for dims in [2, 8, 64] {
        let (a, b) = stats_pair(dims);
        group.bench_with_input(BenchmarkId::from_parameter(dims), &dims, |bench, _| {
            bench.iter(|| merge_stats(black_box(&a), black_box(&b)).unwrap())
        });
    }
    group.finish();
}

fn aggregation(c: &mut Criterion) {
    let mut group = c.benchmark_group("aggregate");
    for (sites, k_i) in [(4, 10), (8, 20), (16, 25)] {
        let subs = sub_clusters(sites, k_i, 1);
        let params = AggregationParams::default();
        group.bench_with_input(BenchmarkId::from_parameter(subs.len()), &subs, |bench, subs| {
            bench.iter(|| aggregate(black_box(subs), &params).unwrap())
        });
    }
    group.finish();
}

fn kmeans(c: &mut Criterion) {
    let mut group = c.benchmark_group("local_kmeans");
    group.sample_size(20);
    for n in [1000, 5000] {
        let points = blobs(2, 4, n / 4, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &points, |bench, points| {
            bench.iter(|| local_cluster(black_box(points), 10, 7, 0).unwrap())
        });
    }
    group.finish();
}

fn mining(c: &mut Criterion) {
    let params = MiningParams::new(0.1, 4).unwrap();
    let generated = transactions(4, 4000, 3);
    let fixed = two_pass();
    let fixed_params = MiningParams::new(0.2, 4).unwrap();

    let mut group = c.benchmark_group("mining");
    group.sample_size(20);
    for (name, dbs, params) in [
        ("generated", &generated, &params),
        ("two_pass", &fixed, &fixed_params),
    ] {
        group.bench_function(BenchmarkId::new("gfm", name), |bench| {
            bench.iter(|| gfm_run(black_box(dbs), params, &mut session(dbs.len())).unwrap())
        });
        group.bench_function(BenchmarkId::new("fdm", name), |bench| {
            bench.iter(|| fdm_run(black_box(dbs), params, &mut session(dbs.len())).unwrap())
        });
        group.bench_function(BenchmarkId::new("centralized", name), |bench| {
            bench.iter(|| centralized(black_box(dbs), params).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, merge, aggregation, kmeans, mining);
criterion_main!(benches);
