//! Minimal deterministic network substrate.

mod gemm;
mod layer;
mod loss;
mod model;
mod optim;
mod train;

pub use layer::{Conv2d, Dense, Layer, LayerKind, LayerSpec, MaxPool2d};
pub use loss::{softmax_cross_entropy, softmax_cross_entropy_grad};
pub use model::{ArchSpec, Batch, Model};
pub use optim::{Algorithm, Optimizer, OptimizerConfig};
pub use train::{argmax, evaluate, predict, run_epoch, train, EpochRecord, TrainConfig};
