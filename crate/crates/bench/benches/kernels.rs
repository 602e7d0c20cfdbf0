use criterion::{black_box, criterion_group, criterion_main, Criterion, Throughput};

use gvae_core::autodiff::Tape;
use gvae_core::metrics::{evaluate, MetricConfig, Representation};
use gvae_core::nn::seeded_rng;
use gvae_core::tensor::{matmul, Tensor};
use gvae_core::FactorSpec;

fn gemm(c: &mut Criterion) {
    let a = Tensor::<f32>::full(&[1280, 256], 0.01);
    let b = Tensor::<f32>::full(&[256, 256], 0.02);
    let mut g = c.benchmark_group("matmul");
    g.throughput(Throughput::Elements(2 * 1280 * 256 * 256));
    g.bench_function("1280x256x256", |bench| {
        bench.iter(|| matmul(black_box(&a), false, black_box(&b), false).unwrap())
    });
    g.bench_function("1280x256x256_at", |bench| {
        bench.iter(|| matmul(black_box(&a), true, black_box(&a), false).unwrap())
    });
    g.finish();
}

fn elementwise(c: &mut Criterion) {
    let x = Tensor::<f32>::full(&[1280, 256], 0.3);
    c.bench_function("tape_tanh_backward_327k", |bench| {
        bench.iter(|| {
            let mut tape = Tape::<f32>::new();
            let v = tape.leaf(x.clone());
            let t = tape.tanh(v);
            let s = tape.sum(t);
            tape.backward(s).unwrap()
        })
    });
}

fn metrics(c: &mut Criterion) {
    let spec = FactorSpec::default();
    let rep = Representation::noise(&spec, 4, &mut seeded_rng(0));
    let mut g = c.benchmark_group("metrics");
    g.sample_size(10);
    g.bench_function("all_four_d4", |bench| {
        bench.iter(|| evaluate(black_box(&rep), &MetricConfig::default()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, gemm, elementwise, metrics);
criterion_main!(benches);
