use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::Array2;
use pfdcount_core::neural::{DenseNet, Scaling};
use pfdcount_core::protocols::{run_3ssbb, run_bb};
use pfdcount_core::seed::rng_from;
use pfdcount_core::workload::{sample_series, TransitionSpec};

fn network(c: &mut Criterion) {
    let scaling = Scaling { n_max: 64.0, types: 1 };
    let net = DenseNet::pfd(301, scaling, 1).unwrap();
    let x: Vec<f64> = (0..301).map(|i| (i % 7) as f64 / 7.0).collect();
    c.bench_function("forward_301", |b| b.iter(|| net.forward(black_box(&x)).unwrap()));

    let batch = Array2::from_shape_fn((32, 301), |(r, i)| ((r + i) % 5) as f64 / 5.0);
    c.bench_function("forward_backward_301_batch32", |b| {
        b.iter(|| {
            let cache = net.forward_batch(batch.view()).unwrap();
            let up = cache.output().to_owned();
            net.backward(&cache, up.view()).unwrap()
        })
    });
}

fn trials(c: &mut Criterion) {
    let mut rng = rng_from(2);
    c.bench_function("run_bb_n32_l100", |b| b.iter(|| run_bb(black_box(32), 100, 32.0, &mut rng)));
    let mut rng = rng_from(3);
    let n = [20, 30, 40];
    let rough = [20.0, 30.0, 40.0];
    c.bench_function("run_3ssbb_t3_l100", |b| {
        b.iter(|| run_3ssbb(black_box(&n), 100, &rough, &mut rng).unwrap())
    });
}

fn workload(c: &mut Criterion) {
    let spec = TransitionSpec::new(65, 0.2, 5).unwrap();
    c.bench_function("sample_series_2000", |b| {
        b.iter_batched(|| 7u64, |seed| sample_series(&spec, 32, 2000, seed).unwrap(), BatchSize::SmallInput)
    });
}

criterion_group!(benches, network, trials, workload);
criterion_main!(benches);
