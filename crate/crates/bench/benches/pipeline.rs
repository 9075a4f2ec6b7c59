use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use ifdet_bench::{pinned_session, raw_input, session, simulated_slot};
use ifdet_core::model::{ModelConfig, Tactic};
use ifdet_core::FeatureRecord;

fn forward_reduced(c: &mut Criterion) {
    let config = ModelConfig::reduced(8, 16, 256, 2).unwrap();
    let (iq, scalars) = raw_input(&config, 3);
    let mut group = c.benchmark_group("forward_reduced");
    for tactic in Tactic::candidates() {
        let mut s = pinned_session(&config, tactic, 1).unwrap();
        let id = format!("{:?}/{:?}", tactic.lowering, tactic.kernel);
        group.bench_function(BenchmarkId::from_parameter(id), |b| {
            b.iter(|| black_box(s.forward_raw(black_box(&iq), &scalars).unwrap()))
        });
    }
    let mut tuned = session(&config, 1).unwrap();
    tuned.warmup().unwrap();
    group.bench_function("autotuned", |b| {
        b.iter(|| black_box(tuned.forward_raw(black_box(&iq), &scalars).unwrap()))
    });
    group.finish();
}

fn forward_production(c: &mut Criterion) {
    let config = ModelConfig::new(64, 128, 32, 2).unwrap();
    let record = simulated_slot(5).unwrap().record;
    let mut s = session(&config, 1).unwrap();
    s.warmup().unwrap();
    let mut group = c.benchmark_group("forward_production");
    group.sample_size(10);
    group.bench_function("64x128", |b| {
        b.iter(|| black_box(s.forward(black_box(&record)).unwrap()))
    });
    group.finish();
}

fn simulate(c: &mut Criterion) {
    let mut seed = 0u64;
    c.bench_function("simulate_slot", |b| {
        b.iter(|| {
            seed += 1;
            black_box(simulated_slot(seed).unwrap())
        })
    });
}

fn record_codec(c: &mut Criterion) {
    let record = simulated_slot(7).unwrap().record;
    let mut buf = Vec::with_capacity(200_000);
    record.encode_into(&mut buf);
    let encoded = buf.clone();
    let mut group = c.benchmark_group("record");
    group.throughput(Throughput::Bytes(encoded.len() as u64));
    group.bench_function("encode", |b| {
        b.iter(|| {
            buf.clear();
            record.encode_into(&mut buf);
            black_box(buf.len())
        })
    });
    group.bench_function("decode", |b| {
        b.iter(|| black_box(FeatureRecord::decode(black_box(&encoded)).unwrap()))
    });
    group.finish();
}

criterion_group!(
    benches,
    forward_reduced,
    forward_production,
    simulate,
    record_codec
);
criterion_main!(benches);
