//! Minibatch training loop and accuracy evaluation.

use serde::{Deserialize, Serialize};

use super::model::Model;
use super::optim::{Optimizer, OptimizerConfig};
use crate::data::{shuffled_batches, Dataset};
use crate::error::{Error, Result};
use crate::objective::{Objective, Supervised};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 64,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be at least 1".into(),
            ));
        }
        self.optimizer.validate()
    }
}

/// Runs one pass over `obj`'s samples in a seeded order, stepping `opt` on the
/// gradients returned by `grad_fn`. Returns the mean minibatch loss.
pub fn run_epoch<O, F>(
    obj: &mut O,
    opt: &mut Optimizer,
    batch_size: usize,
    seed: u64,
    mut grad_fn: F,
) -> Result<f64>
where
    O: Objective + ?Sized,
    F: FnMut(&O, &[usize]) -> Result<(f64, Vec<Tensor>)>,
{
    let batches = shuffled_batches(obj.num_samples(), batch_size, seed);
    let mut total = 0.0;
    for idx in &batches {
        let (loss, grads) = grad_fn(obj, idx)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: format!("training loss ({loss})"),
            });
        }
        total += loss;
        opt.step(&mut obj.params_mut(), &grads)?;
    }
    Ok(total / batches.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
}

/// Trains `model` on `train` with plain cross-entropy, logging one record per epoch.
pub fn train(
    model: Model,
    train: &Dataset,
    validation: Option<&Dataset>,
    config: &TrainConfig,
    seed: u64,
) -> Result<(Model, Vec<EpochRecord>)> {
    config.validate()?;
    let mut obj = Supervised::new(model, train, validation)?;
    let mut opt = Optimizer::new(config.optimizer.clone())?;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let train_loss = run_epoch(
            &mut obj,
            &mut opt,
            config.batch_size,
            derive_seed(seed, epoch as u64),
            |o, idx| o.loss_and_grad(idx),
        )?;
        let val_accuracy = obj.validation_accuracy().transpose()?;
        log::info!("epoch {epoch}: loss {train_loss:.5} val acc {val_accuracy:?}");
        log.push(EpochRecord {
            epoch,
            train_loss,
            val_accuracy,
        });
    }
    Ok((obj.model, log))
}

const EVAL_BATCH: usize = 500;

/// Predicted class per sample; ties go to the lowest class index.
pub fn predict(model: &Model, dataset: &Dataset) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(dataset.len());
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let b = dataset.batch(chunk);
        let logits = model.forward(&b.inputs)?;
        let classes = logits.shape()[1];
        for row in logits.data().chunks_exact(classes) {
            out.push(argmax(row));
        }
    }
    Ok(out)
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty dataset".into()));
    }
    let preds = predict(model, dataset)?;
    let correct = preds
        .iter()
        .zip(dataset.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}
