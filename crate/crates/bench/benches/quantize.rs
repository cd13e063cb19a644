use admmq_bench::{lenet_batch, tensor};
use admmq_core::pack::{self, pack_model};
use admmq_core::quant::{project_optimal, LayerQuant, QuantMode, QuantScheme};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

fn projection(c: &mut Criterion) {
    let mut group = c.benchmark_group("project_optimal");
    // sizes of the LeNet-5 weight tensors
    for n in [150, 2400, 30720] {
        let w = tensor(n, 7);
        group.throughput(Throughput::Elements(n as u64));
        for mode in [QuantMode::Binary, QuantMode::Ternary] {
            group.bench_with_input(BenchmarkId::new(format!("{mode:?}"), n), &w, |b, w| {
                b.iter(|| project_optimal(black_box(w), mode).unwrap())
            });
        }
    }
    group.finish();
}

fn packing(c: &mut Criterion) {
    let (mut model, _) = lenet_batch(1);
    let mut layers = Vec::new();
    for i in 0..model.num_weight_layers() {
        let q = project_optimal(model.weight(i), QuantMode::Binary).unwrap();
        layers.push(LayerQuant {
            mode: QuantMode::Binary,
            alpha: Some(q.alpha()),
        });
        *model.weight_mut(i) = q.into_values();
    }
    let scheme = QuantScheme { layers };
    let bytes = pack::encode(&pack_model(&model, &scheme).unwrap());

    c.bench_function("pack binary lenet5", |b| {
        b.iter(|| pack::encode(&pack_model(black_box(&model), &scheme).unwrap()))
    });
    c.bench_function("unpack binary lenet5", |b| {
        b.iter(|| pack::unpack(black_box(&bytes)).unwrap())
    });
}

criterion_group!(benches, projection, packing);
criterion_main!(benches);
