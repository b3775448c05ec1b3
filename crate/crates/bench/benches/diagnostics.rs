use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mprobe::data_gen::generate_dataset;
use mprobe::diagnostics::{t1, t2, t3, Family, TestFunction};
use mprobe::numeric::quantile;
use mprobe::sampler::{filter_outlier_paths, generate_ensemble, Ordering, SamplingProtocol};
use mprobe::{RngStream, SyntheticModel, TaskKind, TaskSpec};

fn protocol(seed: u64) -> SamplingProtocol {
    SamplingProtocol {
        ordering: Ordering::PermutePerPath,
        j: 200,
        m: 24,
        ensemble_seed: seed,
    }
}

fn benches(c: &mut Criterion) {
    let data = generate_dataset(&TaskSpec::bernoulli(0.5), 50, &mut RngStream::new(1, 0)).unwrap();
    let model = SyntheticModel::reference(TaskKind::Bernoulli);

    c.bench_function("ensemble_j200_m24", |b| {
        b.iter(|| generate_ensemble(&model, black_box(&protocol(3)), &data).unwrap())
    });

    let ensemble = filter_outlier_paths(&generate_ensemble(&model, &protocol(3), &data).unwrap()).unwrap();
    c.bench_function("t1_identity", |b| b.iter(|| t1(black_box(&ensemble), TestFunction::Identity).unwrap()));
    c.bench_function("t2_k2_to_5", |b| {
        b.iter(|| (2..=5).map(|k| t2(black_box(&ensemble), k).unwrap()).sum::<f64>())
    });
    c.bench_function("t3_bernoulli", |b| b.iter(|| t3(black_box(&ensemble), Family::Bernoulli).unwrap()));

    let values: Vec<f64> = (0..300).map(|i| ((i * 7919) % 300) as f64).collect();
    c.bench_function("quantile_300", |b| b.iter(|| quantile(black_box(&values), 0.975).unwrap()));
}

criterion_group!(diagnostics, benches);
criterion_main!(diagnostics);
