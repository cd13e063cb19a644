use admmq_bench::lenet_batch;
use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use std::hint::black_box;

fn lenet(c: &mut Criterion) {
    let mut group = c.benchmark_group("lenet5 batch 64");
    let (model, batch) = lenet_batch(64);
    group.throughput(Throughput::Elements(64));
    group.bench_function("forward", |b| {
        b.iter(|| model.forward(black_box(&batch.inputs)).unwrap())
    });
    group.bench_function("forward+backward", |b| {
        b.iter(|| model.backward(black_box(&batch)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, lenet);
criterion_main!(benches);
