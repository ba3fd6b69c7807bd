use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sfr_bench::standard_dataset;
use sfr_core::classifier::{train, LinearClassifier, TrainConfig};
use sfr_core::protocol::{run_dfcil, RunConfig};
use sfr_core::prototype::{fit_prototype, Mahalanobis, ProtoConfig, PrototypeStore};
use sfr_core::sampler::{sample_gaussian, synthetic_replay, SamplerConfig};

fn prototypes(c: &mut Criterion) {
    let ds = standard_dataset();
    let rows = ds.classes[&0].train.rows_of(0);
    let cfg = ProtoConfig::default();
    c.bench_function("fit_prototype d=64 n=200", |b| {
        b.iter(|| fit_prototype(0, black_box(&rows), &cfg).unwrap())
    });
    let p = fit_prototype(0, &rows, &cfg).unwrap();
    let m = Mahalanobis::new(&p, false).unwrap();
    let z = ds.classes[&1].test.row(0).to_vec();
    c.bench_function("mahalanobis d=64", |b| b.iter(|| m.distance_squared(black_box(&z))));

    let mut group = c.benchmark_group("sample_gaussian d=64");
    for n in [100, 1000] {
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            b.iter(|| sample_gaussian(&p, n, &mut rng).unwrap())
        });
    }
    group.finish();
}

fn replay_and_training(c: &mut Criterion) {
    let ds = standard_dataset();
    let labels: Vec<u32> = (0..8).collect();
    let mut base = sfr_core::features::FeatureSet::new(ds.dim());
    let mut store = PrototypeStore::new(ds.dim());
    for &l in &labels {
        let train_rows = &ds.classes[&l].train;
        base.extend(train_rows).unwrap();
        store
            .insert(fit_prototype(l, &train_rows.rows_of(l), &ProtoConfig::default()).unwrap())
            .unwrap();
    }
    let cfg = TrainConfig::default();
    let head = LinearClassifier::new(ds.dim(), &labels).unwrap();
    let clf = train(&head, &base, &[], &cfg).unwrap().classifier;

    c.bench_function("synthetic_replay 8 classes x 100", |b| {
        b.iter(|| synthetic_replay(&store, &clf, &SamplerConfig::default()).unwrap())
    });
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("8 classes x 200 rows, 50 epochs", |b| {
        b.iter(|| train(&head, black_box(&base), &[], &cfg).unwrap())
    });
    group.finish();
}

fn end_to_end(c: &mut Criterion) {
    let ds = standard_dataset();
    let cfg = RunConfig {
        trials: 1,
        ..RunConfig::new("unused")
    };
    let plan = cfg.plan(&ds.manifest).unwrap();
    let mut group = c.benchmark_group("run_dfcil");
    group.sample_size(10);
    group.bench_function("7 sessions, 1 trial", |b| {
        b.iter(|| run_dfcil(&ds, &plan, &cfg.settings()).unwrap())
    });
    group.finish();
}

criterion_group!(benches, prototypes, replay_and_training, end_to_end);
criterion_main!(benches);
