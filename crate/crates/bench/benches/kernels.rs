use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use esmhc_bench::{desk_model, uniform};
use esmhc_core::mhc::sinkhorn_knopp;
use esmhc_core::ssm::{selective_scan, OutputInit, SsmParams};
use esmhc_core::{ParamStore, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sinkhorn(c: &mut Criterion) {
    let mut group = c.benchmark_group("sinkhorn");
    for n in [2, 3, 5] {
        let logits = uniform(&[1024, n, n], 1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &logits, |b, logits| {
            b.iter(|| {
                let mut tape = Tape::new();
                let x = tape.constant(logits.clone()).unwrap();
                black_box(sinkhorn_knopp(&mut tape, x, 20, 1e-6).unwrap());
            })
        });
    }
    group.finish();
}

fn scan(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let p = SsmParams::register(&mut store, "s", 32, 16, OutputInit::Random, &mut rng).unwrap();
    let mut group = c.benchmark_group("selective_scan");
    for batch in [1, 16, 64] {
        let x = uniform(&[batch, 256, 32], 3);
        group.bench_with_input(BenchmarkId::new("forward", batch), &x, |b, x| {
            b.iter(|| {
                let mut tape = Tape::new();
                let bound = store.bind_frozen(&mut tape).unwrap();
                let v = tape.constant(x.clone()).unwrap();
                black_box(selective_scan(&mut tape, v, &p, &bound).unwrap());
            })
        });
        group.bench_with_input(BenchmarkId::new("forward_backward", batch), &x, |b, x| {
            b.iter(|| {
                let mut tape = Tape::new();
                let bound = store.bind(&mut tape).unwrap();
                let v = tape.constant(x.clone()).unwrap();
                let y = selective_scan(&mut tape, v, &p, &bound).unwrap();
                let s = tape.sum(y).unwrap();
                black_box(tape.backward(s).unwrap());
            })
        });
    }
    group.finish();
}

fn model(c: &mut Criterion) {
    let (model, input) = desk_model();
    let mut group = c.benchmark_group("model");
    group.sample_size(10);
    group.bench_function("forward_32x32", |b| {
        b.iter(|| black_box(model.logits(&input).unwrap()))
    });
    group.bench_function("layer_forward_32x32", |b| {
        let r = uniform(&[1024, 3, 32], 4);
        b.iter(|| {
            let mut tape = Tape::new();
            let bound = model.store.bind_frozen(&mut tape).unwrap();
            let x = tape.constant(r.clone()).unwrap();
            black_box(model.layer_forward(&mut tape, &bound, 0, x, None).unwrap());
        })
    });
    group.finish();
}

criterion_group!(benches, sinkhorn, scan, model);
criterion_main!(benches);
