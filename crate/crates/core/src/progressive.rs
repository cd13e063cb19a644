//! Multi-step progressive quantization.
//!
//! Each step runs a full ADMM quantization pass starting from the best
//! quantized model found so far (its quantized values become the new starting
//! weights). A step's result replaces the incumbent only if its validation
//! accuracy is strictly higher.
//!
//! Steps may be staged through coarser level sets, e.g. ternary then binary.
//! Only results in the final stage's level set compete for the returned model;
//! earlier-stage results are kept as the starting point for the next step
//! until a final-stage result exists.

use serde::{Deserialize, Serialize};

use crate::admm::{run_admm_from, AdmmConfig, RowKind, Trace, TraceRow};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{evaluate, Model};
use crate::objective::Supervised;
use crate::quant::{QuantMode, QuantScheme};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProgressiveConfig {
    pub num_steps: usize,
    /// Level set per step; a single entry applies to every step.
    pub stages: Vec<QuantMode>,
    /// ADMM settings shared by all steps unless `per_step_admm` is given.
    pub admm: AdmmConfig,
    /// Optional per-step ADMM settings, one entry per step.
    pub per_step_admm: Vec<AdmmConfig>,
    /// Restart the penalty schedule at every step; otherwise it continues
    /// counting across steps.
    pub reset_rho_each_step: bool,
}

impl Default for ProgressiveConfig {
    fn default() -> Self {
        ProgressiveConfig {
            num_steps: 3,
            stages: vec![QuantMode::Ternary, QuantMode::Binary, QuantMode::Binary],
            admm: AdmmConfig::default(),
            per_step_admm: Vec::new(),
            reset_rho_each_step: true,
        }
    }
}

impl ProgressiveConfig {
    /// A single ADMM pass.
    pub fn one_shot(mode: QuantMode, admm: AdmmConfig) -> Self {
        ProgressiveConfig {
            num_steps: 1,
            stages: vec![mode],
            admm,
            per_step_admm: Vec::new(),
            reset_rho_each_step: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_steps == 0 {
            return Err(Error::Config("num_steps must be at least 1".into()));
        }
        if !(self.stages.len() == 1 || self.stages.len() == self.num_steps) {
            return Err(Error::Config(format!(
                "stages has {} entries; expected 1 or num_steps = {}",
                self.stages.len(),
                self.num_steps
            )));
        }
        if self.stages.contains(&QuantMode::Excluded) {
            return Err(Error::Config("a stage must be binary or ternary".into()));
        }
        if !(self.per_step_admm.is_empty() || self.per_step_admm.len() == self.num_steps) {
            return Err(Error::Config(format!(
                "per_step_admm has {} entries; expected 0 or num_steps = {}",
                self.per_step_admm.len(),
                self.num_steps
            )));
        }
        self.admm.validate()?;
        self.per_step_admm.iter().try_for_each(AdmmConfig::validate)
    }

    pub fn stage(&self, step: usize) -> QuantMode {
        if self.stages.len() == 1 {
            self.stages[0]
        } else {
            self.stages[step]
        }
    }

    pub fn target(&self) -> QuantMode {
        self.stage(self.num_steps - 1)
    }

    pub fn admm_for(&self, step: usize) -> &AdmmConfig {
        self.per_step_admm.get(step).unwrap_or(&self.admm)
    }

    /// Total W-update epochs when every step runs its full iteration budget.
    pub fn epoch_budget(&self) -> usize {
        (0..self.num_steps)
            .map(|s| {
                let a = self.admm_for(s);
                a.max_iterations * a.epochs_per_w_update
            })
            .sum()
    }
}

/// What one progressive step did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub mode: QuantMode,
    /// Step whose result this step started from; `None` for the pretrained model.
    pub started_from: Option<usize>,
    pub val_accuracy: f64,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub iterations: usize,
    pub budget_exhausted: bool,
    /// Whether the result became the incumbent.
    pub selected: bool,
    pub alphas: Vec<Option<f64>>,
    pub admm: AdmmConfig,
}

/// A feasible quantized model competing for selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub model: Model,
    pub scheme: QuantScheme,
    pub accuracy: f64,
    pub step: usize,
}

impl Candidate {
    fn mode(&self) -> Option<QuantMode> {
        self.scheme
            .layers
            .iter()
            .map(|l| l.mode)
            .find(|m| m.is_quantized())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgressiveState {
    /// Completed steps.
    pub step: usize,
    pub target: QuantMode,
    pub baseline_accuracy: Option<f64>,
    /// Best result in the target level set.
    pub best: Option<Candidate>,
    /// Best result of the most recent earlier stage, used as a starting point
    /// until `best` exists.
    pub stage_best: Option<Candidate>,
    pub history: Vec<StepRecord>,
    /// ADMM iterations run so far, over all steps.
    pub total_iterations: usize,
}

impl ProgressiveState {
    pub fn new(target: QuantMode) -> Self {
        ProgressiveState {
            step: 0,
            target,
            baseline_accuracy: None,
            best: None,
            stage_best: None,
            history: Vec::new(),
            total_iterations: 0,
        }
    }

    pub fn best_accuracy(&self) -> Option<f64> {
        self.best.as_ref().map(|c| c.accuracy)
    }

    /// Where the next step starts: the incumbent, else the latest stage's best.
    pub fn carry(&self) -> Option<&Candidate> {
        self.best.as_ref().or(self.stage_best.as_ref())
    }
}

/// Appends `record` to the history and makes `candidate` the incumbent iff it
/// is in the target level set and strictly beats the current best accuracy.
/// Ties keep the incumbent. Returns whether the candidate was selected.
pub fn compare_and_select(
    state: &mut ProgressiveState,
    candidate: Candidate,
    mut record: StepRecord,
) -> Result<bool> {
    if let Some(layer) = candidate
        .scheme
        .first_infeasible(&candidate.model.weights())
    {
        return Err(Error::Infeasible { layer });
    }
    let mode = candidate.mode();
    let selected = if mode == Some(state.target) {
        let better = state
            .best_accuracy()
            .map_or(true, |b| candidate.accuracy > b);
        if better {
            state.best = Some(candidate);
        }
        better
    } else {
        let better = match &state.stage_best {
            Some(prev) if prev.mode() == mode => candidate.accuracy > prev.accuracy,
            _ => true,
        };
        if better {
            state.stage_best = Some(candidate);
        }
        better
    };
    record.selected = selected;
    state.history.push(record);
    state.step += 1;
    Ok(selected)
}

/// Runs step `state.step` from the carried model (or `pretrained` when
/// nothing has been carried yet). Does not modify `state`.
pub fn run_step(
    state: &ProgressiveState,
    pretrained: &Model,
    train: &Dataset,
    validation: &Dataset,
    config: &ProgressiveConfig,
    master_seed: u64,
) -> Result<(StepRecord, Candidate, Trace)> {
    let step = state.step;
    let (start, started_from) = match state.carry() {
        Some(c) => (&c.model, Some(c.step)),
        None => (pretrained, None),
    };
    let mode = config.stage(step);
    let admm = config.admm_for(step);
    let scheme = QuantScheme::uniform(&start.weights(), mode, &admm.excluded_layers)?;
    let mut obj = Supervised::new(start.clone(), train, Some(validation))?;
    let offset = if config.reset_rho_each_step {
        0
    } else {
        state.total_iterations
    };
    let report = run_admm_from(
        &mut obj,
        &scheme,
        admm,
        derive_seed(master_seed, step as u64),
        offset,
    )?;
    let model = obj.model;
    let accuracy = evaluate(&model, validation)?;
    let max = |r: &[f64]| r.iter().copied().fold(0.0, f64::max);
    log::info!(
        "step {step} ({mode:?}): val accuracy {accuracy:.4} after {} iterations",
        report.iterations
    );
    let record = StepRecord {
        step,
        mode,
        started_from,
        val_accuracy: accuracy,
        initial_residual: max(&report.initial_residuals),
        final_residual: max(&report.final_residuals),
        iterations: report.iterations,
        budget_exhausted: report.budget_exhausted,
        selected: false,
        alphas: report.scheme.layers.iter().map(|l| l.alpha).collect(),
        admm: admm.clone(),
    };
    let candidate = Candidate {
        model,
        scheme: report.scheme,
        accuracy,
        step,
    };
    Ok((record, candidate, report.trace))
}

#[derive(Debug, Clone)]
pub struct ProgressiveOutcome {
    pub model: Model,
    pub scheme: QuantScheme,
    pub state: ProgressiveState,
    pub trace: Trace,
}

/// The full outer loop: `num_steps` rounds of [`run_step`] and [`compare_and_select`].
pub fn run_progressive(
    pretrained: &Model,
    train: &Dataset,
    validation: &Dataset,
    config: &ProgressiveConfig,
    master_seed: u64,
) -> Result<ProgressiveOutcome> {
    config.validate()?;
    let mut state = ProgressiveState::new(config.target());
    state.baseline_accuracy = Some(evaluate(pretrained, validation)?);
    let mut trace = Trace::default();
    for _ in 0..config.num_steps {
        let (record, candidate, step_trace) =
            run_step(&state, pretrained, train, validation, config, master_seed)?;
        trace.extend_shifted(&step_trace, state.total_iterations);
        state.total_iterations += record.iterations;
        let summary = TraceRow {
            k: state.total_iterations,
            layer: RowKind::Step(record.step),
            rho: step_trace.iterations().last().map_or(0.0, |r| r.rho),
            residual: record.final_residual,
            train_loss: step_trace.iterations().last().and_then(|r| r.train_loss),
            val_accuracy: Some(record.val_accuracy),
        };
        compare_and_select(&mut state, candidate, record)?;
        trace.push(summary);
    }
    let best = state
        .best
        .clone()
        .ok_or_else(|| Error::Config("no step produced a model in the target level set".into()))?;
    Ok(ProgressiveOutcome {
        model: best.model,
        scheme: best.scheme,
        state,
        trace,
    })
}
