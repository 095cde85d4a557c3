use std::hint::black_box;

use caafp_bench::model_fixtures;
use caafp_core::nn::{local_train, Batch, Mode, OptimizerState, Proximal, TrainConfig};
use caafp_core::pruning::Mask;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

const BATCH: usize = 32;

fn forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("network");
    group.throughput(Throughput::Elements(BATCH as u64));
    for f in model_fixtures(BATCH) {
        let inputs = f.samples.inputs();
        let labels = f.samples.labels();
        let batch = Batch::new(inputs, f.samples.sample_len()).unwrap();
        group.bench_function(BenchmarkId::new("forward", f.name), |b| {
            b.iter(|| {
                f.net
                    .forward(black_box(&f.params), &batch, Mode::Eval)
                    .unwrap()
            })
        });
        group.bench_function(BenchmarkId::new("loss_and_grad", f.name), |b| {
            b.iter(|| {
                f.net
                    .loss_and_grad(
                        black_box(&f.params),
                        &batch,
                        labels,
                        None,
                        None,
                        Mode::Train { seed: 3 },
                    )
                    .unwrap()
            })
        });
        let reference = f.params.clone();
        let mask = Mask::for_layout(f.net.layout());
        group.bench_function(BenchmarkId::new("loss_and_grad_prox_masked", f.name), |b| {
            b.iter(|| {
                f.net
                    .loss_and_grad(
                        black_box(&f.params),
                        &batch,
                        labels,
                        Some(Proximal {
                            reference: &reference,
                            lambda: 0.1,
                        }),
                        Some(&mask),
                        Mode::Train { seed: 3 },
                    )
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn local_epoch(c: &mut Criterion) {
    let mut group = c.benchmark_group("local_train");
    group.sample_size(10);
    let samples = 4 * BATCH;
    group.throughput(Throughput::Elements(samples as u64));
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: BATCH,
        learning_rate: 1e-3,
        dropout: true,
    };
    for f in model_fixtures(samples) {
        group.bench_function(BenchmarkId::new("one_epoch", f.name), |b| {
            b.iter(|| {
                let mut opt = OptimizerState::new(f.params.len(), cfg.learning_rate);
                local_train(
                    &f.net,
                    black_box(&f.params),
                    &f.samples,
                    &cfg,
                    &mut opt,
                    None,
                    None,
                    11,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, forward_backward, local_epoch);
criterion_main!(benches);
