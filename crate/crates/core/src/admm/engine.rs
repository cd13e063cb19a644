//! ADMM splitting for weight quantization.
//!
//! The constrained problem `min f(W) s.t. W_i in Q_i` is split with auxiliary
//! copies `Q_i` and scaled duals `U_i`. Each iteration:
//!
//! 1. W-update: a few epochs of SGD/Adam on `f(W) + sum_i rho_i/2 ||W_i - Q_i + U_i||^2`;
//! 2. Q-update: `Q_i = proj(W_i + U_i)` onto the layer's level set;
//! 3. U-update: `U_i += W_i - Q_i`.
//!
//! When the penalty schedule changes `rho`, `U` is rescaled by `rho_old / rho_new`
//! before the W-update (unless disabled), as `U` is the dual divided by `rho`.
//!
//! After the loop every quantized `W_i` is overwritten by `Q_i`, so the
//! returned weights are exactly feasible whether or not ADMM converged.

use serde::{Deserialize, Serialize};

use super::schedule::RhoSchedule;
use super::trace::{RowKind, Trace, TraceRow};
use crate::error::{Error, Result};
use crate::nn::{run_epoch, Optimizer, OptimizerConfig};
use crate::objective::Objective;
use crate::quant::{project_optimal, LayerQuant, QuantMode, QuantScheme, QuantizedLayer};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdmmConfig {
    /// Training epochs per W-update.
    pub epochs_per_w_update: usize,
    pub max_iterations: usize,
    /// Iterations always run before the convergence test may stop the loop.
    pub min_iterations: usize,
    /// Stop once `max_i ||W_i - Q_i||_F / ||W_i||_F` falls below this.
    pub tolerance: f64,
    pub rho: RhoSchedule,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Weight-layer indices kept in full precision.
    pub excluded_layers: Vec<usize>,
    /// Rescale the scaled dual `U` whenever `rho` changes so that `rho * U`
    /// is preserved.
    pub rescale_dual: bool,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            epochs_per_w_update: 3,
            max_iterations: 30,
            min_iterations: 0,
            tolerance: 1e-3,
            rho: RhoSchedule::default(),
            batch_size: 64,
            optimizer: OptimizerConfig::default(),
            excluded_layers: Vec::new(),
            rescale_dual: true,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_per_w_update == 0 || self.max_iterations == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs_per_w_update, max_iterations and batch_size must be at least 1".into(),
            ));
        }
        if self.min_iterations > self.max_iterations {
            return Err(Error::Config(format!(
                "min_iterations {} exceeds max_iterations {}",
                self.min_iterations, self.max_iterations
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        self.rho.validate()?;
        self.optimizer.validate()
    }
}

/// ADMM variables of one quantized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    /// Weight-layer index `i`.
    pub layer: usize,
    /// Position of `W_i` in the objective's parameter list.
    pub param: usize,
    pub q: QuantizedLayer,
    pub u: Tensor,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub layers: Vec<LayerState>,
    /// Completed iterations.
    pub k: usize,
}

impl AdmmState {
    /// `Q_i = proj(W_i)`, `U_i = 0` for every quantized layer of `scheme`.
    pub fn init<O: Objective + ?Sized>(obj: &O, scheme: &QuantScheme, rho: f64) -> Result<Self> {
        let weight_idx = obj.weight_indices();
        if scheme.len() != weight_idx.len() {
            return Err(Error::Shape {
                layer: 0,
                message: format!(
                    "scheme covers {} layers, objective has {} weight tensors",
                    scheme.len(),
                    weight_idx.len()
                ),
            });
        }
        scheme.validate()?;
        let params = obj.params();
        let mut layers = Vec::new();
        for (i, (lq, &p)) in scheme.layers.iter().zip(&weight_idx).enumerate() {
            if !lq.mode.is_quantized() {
                continue;
            }
            let w = params[p];
            let q =
                project_optimal(w, lq.mode).map_err(|e| Error::Quant(format!("layer {i}: {e}")))?;
            layers.push(LayerState {
                layer: i,
                param: p,
                q,
                u: Tensor::zeros(w.shape()),
                rho,
            });
        }
        Ok(AdmmState { layers, k: 0 })
    }

    pub fn set_rho(&mut self, rho: f64) {
        for l in &mut self.layers {
            l.rho = rho;
        }
    }

    /// Changes the penalty while keeping the unscaled dual `rho * U` fixed,
    /// i.e. `U <- U * rho_old / rho_new`.
    pub fn rescale_rho(&mut self, rho: f64) {
        for l in &mut self.layers {
            if l.rho != rho && l.rho > 0.0 {
                let r = l.rho / rho;
                for u in l.u.data_mut() {
                    *u *= r;
                }
            }
            l.rho = rho;
        }
    }

    fn check<O: Objective + ?Sized>(&self, obj: &O) -> Result<()> {
        let params = obj.params();
        for l in &self.layers {
            let ok = params
                .get(l.param)
                .is_some_and(|w| w.same_shape(l.q.values()) && w.same_shape(&l.u));
            if !ok {
                return Err(Error::Shape {
                    layer: l.layer,
                    message: "ADMM state does not match the model's weights".into(),
                });
            }
        }
        Ok(())
    }

    /// `||W_i - Q_i||_F / ||W_i||_F` per quantized layer (absolute when `W_i = 0`).
    pub fn residuals<O: Objective + ?Sized>(&self, obj: &O) -> Vec<f64> {
        let params = obj.params();
        self.layers
            .iter()
            .map(|l| {
                let w = params[l.param];
                let diff = w.sub(l.q.values()).frobenius();
                let norm = w.frobenius();
                if norm > 0.0 {
                    diff / norm
                } else {
                    diff
                }
            })
            .collect()
    }
}

/// `W - Q + U` for one layer.
fn penalty_direction(w: &Tensor, l: &LayerState) -> Tensor {
    w.sub(l.q.values()).add(&l.u)
}

/// `sum_i rho_i / 2 ||W_i - Q_i + U_i||_F^2`
pub fn penalty<O: Objective + ?Sized>(obj: &O, state: &AdmmState) -> f64 {
    let params = obj.params();
    state
        .layers
        .iter()
        .map(|l| 0.5 * l.rho * penalty_direction(params[l.param], l).sum_sq())
        .sum()
}

/// Augmented Lagrangian on a minibatch: `f(W) + sum_i rho_i/2 ||W_i - Q_i + U_i||^2`.
pub fn augmented_loss<O: Objective + ?Sized>(
    obj: &O,
    state: &AdmmState,
    batch: &[usize],
) -> Result<f64> {
    state.check(obj)?;
    Ok(obj.loss(batch)? + penalty(obj, state))
}

/// Minibatch `f` together with the augmented gradient: the objective's
/// gradient plus `rho_i * (W_i - Q_i + U_i)` on each quantized weight tensor.
pub fn augmented_loss_and_grad<O: Objective + ?Sized>(
    obj: &O,
    state: &AdmmState,
    batch: &[usize],
) -> Result<(f64, f64, Vec<Tensor>)> {
    state.check(obj)?;
    let (f, mut grads) = obj.loss_and_grad(batch)?;
    let params = obj.params();
    let mut pen = 0.0;
    for l in &state.layers {
        if l.rho == 0.0 {
            continue;
        }
        let dir = penalty_direction(params[l.param], l);
        pen += 0.5 * l.rho * dir.sum_sq();
        for (g, d) in grads[l.param].data_mut().iter_mut().zip(dir.data()) {
            *g += l.rho * d;
        }
    }
    Ok((f, pen, grads))
}

pub fn augmented_grad<O: Objective + ?Sized>(
    obj: &O,
    state: &AdmmState,
    batch: &[usize],
) -> Result<Vec<Tensor>> {
    augmented_loss_and_grad(obj, state, batch).map(|(_, _, g)| g)
}

/// Approximate W-minimization: `config.epochs_per_w_update` epochs of the
/// optimizer on the augmented gradient. Returns the mean minibatch `f` of the
/// last epoch.
pub fn w_update<O: Objective + ?Sized>(
    obj: &mut O,
    state: &AdmmState,
    opt: &mut Optimizer,
    config: &AdmmConfig,
    seed: u64,
) -> Result<f64> {
    let mut last = 0.0;
    for epoch in 0..config.epochs_per_w_update {
        let mut f_sum = 0.0;
        let mut batches = 0usize;
        run_epoch(
            obj,
            opt,
            config.batch_size,
            derive_seed(seed, epoch as u64),
            |o, idx| {
                let (f, pen, g) = augmented_loss_and_grad(o, state, idx)?;
                f_sum += f;
                batches += 1;
                Ok((f + pen, g))
            },
        )
        .map_err(|e| match e {
            Error::NonFinite { context } => Error::Divergence {
                iteration: state.k + 1,
                message: context,
            },
            other => other,
        })?;
        last = f_sum / batches as f64;
    }
    Ok(last)
}

/// `Q_i = proj(W_i + U_i)` with the scale re-optimized jointly.
pub fn q_update<O: Objective + ?Sized>(obj: &O, state: &mut AdmmState) -> Result<()> {
    let params = obj.params();
    for l in &mut state.layers {
        let target = params[l.param].add(&l.u);
        l.q = project_optimal(&target, l.q.mode()).map_err(|e| match e {
            Error::NonFinite { context } => Error::Divergence {
                iteration: state.k + 1,
                message: format!("layer {}: {context}", l.layer),
            },
            other => Error::Quant(format!("layer {}: {other}", l.layer)),
        })?;
    }
    Ok(())
}

/// `U_i = U_i + (W_i - Q_i)`; advances the iteration counter.
pub fn u_update<O: Objective + ?Sized>(obj: &O, state: &mut AdmmState) {
    let params = obj.params();
    for l in &mut state.layers {
        let diff = params[l.param].sub(l.q.values());
        for (u, d) in l.u.data_mut().iter_mut().zip(diff.data()) {
            *u += d;
        }
    }
    state.k += 1;
}

/// Outcome of one ADMM run.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmReport {
    /// Scheme with each quantized layer's final scale.
    pub scheme: QuantScheme,
    pub trace: Trace,
    pub iterations: usize,
    pub converged: bool,
    /// Set when `max_iterations` ran out before the residual tolerance was met.
    pub budget_exhausted: bool,
    pub initial_residuals: Vec<f64>,
    pub final_residuals: Vec<f64>,
}

/// Runs ADMM from the current parameters of `obj`, then hard-projects. The
/// schedule is evaluated at `k + rho_offset`.
pub fn run_admm<O: Objective + ?Sized>(
    obj: &mut O,
    scheme: &QuantScheme,
    config: &AdmmConfig,
    seed: u64,
) -> Result<AdmmReport> {
    run_admm_from(obj, scheme, config, seed, 0)
}

pub fn run_admm_from<O: Objective + ?Sized>(
    obj: &mut O,
    scheme: &QuantScheme,
    config: &AdmmConfig,
    seed: u64,
    rho_offset: usize,
) -> Result<AdmmReport> {
    config.validate()?;
    for &i in &config.excluded_layers {
        match scheme.layers.get(i) {
            Some(l) if l.mode == QuantMode::Excluded => {}
            _ => {
                return Err(Error::Config(format!(
                    "layer {i} is listed as excluded but the scheme quantizes it"
                )))
            }
        }
    }
    let mut state = AdmmState::init(obj, scheme, config.rho.rho(rho_offset))?;
    let mut trace = Trace::default();
    let initial_residuals = state.residuals(obj);
    record(&mut trace, &state, &initial_residuals, 0, None, None);

    let max_res = |r: &[f64]| r.iter().copied().fold(0.0, f64::max);
    let mut converged =
        config.min_iterations == 0 && max_res(&initial_residuals) < config.tolerance;
    let mut residuals = initial_residuals.clone();
    let mut opt = Optimizer::new(config.optimizer.clone())?;

    while !converged && state.k < config.max_iterations {
        let k = state.k;
        let rho = config.rho.rho(k + rho_offset);
        if config.rescale_dual {
            state.rescale_rho(rho);
        } else {
            state.set_rho(rho);
        }
        let train_loss = w_update(obj, &state, &mut opt, config, derive_seed(seed, k as u64))?;
        q_update(obj, &mut state)?;
        u_update(obj, &mut state);
        residuals = state.residuals(obj);
        let val = obj.validation_accuracy().transpose()?;
        record(
            &mut trace,
            &state,
            &residuals,
            state.k,
            Some(train_loss),
            val,
        );
        log::info!(
            "admm k={} rho={rho:e} loss={train_loss:.5} max residual={:.3e} val={val:?}",
            state.k,
            max_res(&residuals)
        );
        converged = state.k >= config.min_iterations && max_res(&residuals) < config.tolerance;
    }

    // Hard projection: W_i <- Q_i.
    let mut final_scheme = scheme.clone();
    {
        let mut params = obj.params_mut();
        for l in &state.layers {
            *params[l.param] = l.q.values().clone();
            final_scheme.layers[l.layer] = LayerQuant {
                mode: l.q.mode(),
                alpha: Some(l.q.alpha()),
            };
        }
    }

    Ok(AdmmReport {
        scheme: final_scheme,
        trace,
        iterations: state.k,
        converged,
        budget_exhausted: !converged,
        initial_residuals,
        final_residuals: residuals,
    })
}

fn record(
    trace: &mut Trace,
    state: &AdmmState,
    residuals: &[f64],
    k: usize,
    train_loss: Option<f64>,
    val_accuracy: Option<f64>,
) {
    for (l, &r) in state.layers.iter().zip(residuals) {
        trace.push(TraceRow {
            k,
            layer: RowKind::Layer(l.layer),
            rho: l.rho,
            residual: r,
            train_loss: None,
            val_accuracy: None,
        });
    }
    trace.push(TraceRow {
        k,
        layer: RowKind::Iteration,
        rho: state.layers.iter().map(|l| l.rho).fold(0.0, f64::max),
        residual: residuals.iter().copied().fold(0.0, f64::max),
        train_loss,
        val_accuracy,
    });
}
