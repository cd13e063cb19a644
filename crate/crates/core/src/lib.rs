//! Quantization of neural network weights to binary or ternary values by
//! ADMM, with an optional multi-step progressive schedule.
//!
//! The crate contains a small f64 neural network toolkit ([`nn`]), dataset
//! loading ([`data`]), the level-set projections ([`quant`]), the ADMM
//! engine ([`admm`]), the progressive outer loop ([`progressive`]) and
//! persistence ([`checkpoint`], [`pack`]).

pub mod admm;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod nn;
pub mod objective;
pub mod pack;
pub mod progressive;
pub mod quant;
pub mod rng;
pub mod tensor;

pub use admm::{run_admm, AdmmConfig, AdmmReport, RhoSchedule, Trace};
pub use checkpoint::Checkpoint;
pub use data::{Dataset, Split};
pub use error::{Error, Result};
pub use nn::{ArchSpec, Model, OptimizerConfig, TrainConfig};
pub use objective::{Objective, Supervised};
pub use progressive::{run_progressive, ProgressiveConfig, ProgressiveOutcome};
pub use quant::{QuantMode, QuantScheme};
pub use tensor::Tensor;
