use std::hint::black_box;

use caafp_bench::{cluster_signals, grouped_deltas, mask_fixture, random_distances, schedule};
use caafp_core::clustering::{agglomerative_cluster, cosine_distance_matrix};
use caafp_core::pruning::{importance, prune_heal_step, regrowth_signal};
use caafp_core::ScoreWeights;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

const SIZES: [usize; 2] = [10_000, 120_000];

fn scores(c: &mut Criterion) {
    let mut group = c.benchmark_group("scores");
    let weights = ScoreWeights::new(0.5, 0.25, 0.25).unwrap();
    for n in SIZES {
        let signals = cluster_signals(6, n);
        let prunable = signals.client_params[0].clone();
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("importance", n), &n, |b, _| {
            b.iter(|| importance(black_box(&prunable), &signals, &weights).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("regrowth_signal", n), &n, |b, _| {
            b.iter(|| regrowth_signal(black_box(&signals)).unwrap())
        });
    }
    group.finish();
}

fn mask_update(c: &mut Criterion) {
    let mut group = c.benchmark_group("prune_heal_step");
    let sched = schedule(0.7);
    for n in SIZES {
        let (mask, scores, regrowth) = mask_fixture(n, 0.7);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                prune_heal_step(
                    black_box(&mask),
                    &scores,
                    &regrowth,
                    &sched,
                    sched.frequency,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn clustering(c: &mut Criterion) {
    let mut group = c.benchmark_group("clustering");
    for n in [12, 36, 100] {
        let dist = random_distances(n);
        group.bench_with_input(BenchmarkId::new("agglomerative", n), &n, |b, _| {
            b.iter(|| agglomerative_cluster(black_box(&dist), 3).unwrap())
        });
    }
    let deltas = grouped_deltas(3, 12, 20_000);
    group.bench_function("cosine_distances/36x20000", |b| {
        b.iter(|| cosine_distance_matrix(black_box(&deltas)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, scores, mask_update, clustering);
criterion_main!(benches);
