//! Fixtures shared by the benchmarks.

use admmq_core::nn::Batch;
use admmq_core::{ArchSpec, Model, Tensor};

/// Deterministic pseudo-random values in `[-1, 1)`.
pub fn values(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    (0..n)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect()
}

pub fn tensor(n: usize, seed: u64) -> Tensor {
    Tensor::from_vec(values(n, seed))
}

/// LeNet-5 with a batch of `batch` inputs in `[0, 1]`.
pub fn lenet_batch(batch: usize) -> (Model, Batch) {
    let model = Model::new(&ArchSpec::lenet5(), 1).unwrap();
    let pixels = values(batch * 784, 2)
        .into_iter()
        .map(|v| 0.5 * (v + 1.0))
        .collect();
    let inputs = Tensor::new(vec![batch, 1, 28, 28], pixels).unwrap();
    let labels = (0..batch).map(|i| i % 10).collect();
    (model, Batch::new(inputs, labels).unwrap())
}
