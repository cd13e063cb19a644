use std::fs;
use std::path::Path;

use admmq_core::checkpoint::ProgressiveSummary;
use admmq_core::nn::{evaluate, train, EpochRecord};
use admmq_core::pack::{self, pack_model, pack_stats};
use admmq_core::progressive::StepRecord;
use admmq_core::{run_progressive, Checkpoint, Error, Model, QuantMode, QuantScheme, Result};
use serde::Serialize;

use crate::config::RunConfig;

pub const SUMMARY_FILE: &str = "summary.json";
pub const TRACE_FILE: &str = "trace.csv";

#[derive(Debug, Serialize)]
pub struct PretrainSummary {
    pub seed: u64,
    pub train_samples: usize,
    pub validation_accuracy: f64,
    pub test_accuracy: f64,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Serialize)]
pub struct LevelCount {
    pub value: f64,
    pub count: usize,
}

#[derive(Debug, Serialize)]
pub struct LayerReport {
    pub layer: usize,
    pub mode: QuantMode,
    pub alpha: Option<f64>,
    pub weights: usize,
    pub bits_per_weight: u32,
    /// Occurrences of each level; empty for full-precision layers.
    pub histogram: Vec<LevelCount>,
}

#[derive(Debug, Serialize)]
pub struct QuantizeSummary {
    pub seed: u64,
    pub baseline_test_accuracy: f64,
    pub baseline_validation_accuracy: Option<f64>,
    pub test_accuracy: f64,
    pub validation_accuracy: Option<f64>,
    pub best_step: Option<usize>,
    pub effective_bits_per_weight: f64,
    pub layers: Vec<LayerReport>,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Serialize)]
pub struct EvaluateReport {
    pub test_accuracy: f64,
    pub test_samples: usize,
    pub quantized: bool,
    pub effective_bits_per_weight: f64,
    pub layers: Vec<LayerReport>,
}

#[derive(Debug, Serialize)]
pub struct ExportReport {
    pub file_bytes: usize,
    pub weight_payload_bytes: usize,
    pub weight_f64_bytes: usize,
    pub compression_vs_f64: f64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn config_value(config: &RunConfig) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(config)?)
}

pub fn pretrain(config: &RunConfig, out: &Path) -> Result<PretrainSummary> {
    let data = config.splits()?;
    let model = Model::new(&config.architecture, config.init_seed())?;
    let (model, epochs) = train(
        model,
        &data.train,
        Some(&data.validation),
        &config.pretrain,
        config.train_seed(),
    )?;
    let validation_accuracy = evaluate(&model, &data.validation)?;
    let test_accuracy = evaluate(&model, &data.test)?;
    Checkpoint::new(model, None, config_value(config)?)
        .with_metric("validation_accuracy", validation_accuracy)
        .with_metric("test_accuracy", test_accuracy)
        .save(out)?;
    let summary = PretrainSummary {
        seed: config.seed,
        train_samples: data.train.len(),
        validation_accuracy,
        test_accuracy,
        epochs,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

pub fn quantize(config: &RunConfig, baseline: &Path, out: &Path) -> Result<QuantizeSummary> {
    let base = Checkpoint::load(baseline)?;
    if base.manifest.architecture != config.architecture {
        return Err(Error::Config(format!(
            "checkpoint {} has a different architecture than the config",
            baseline.display()
        )));
    }
    let data = config.splits()?;
    let baseline_test_accuracy = evaluate(&base.model, &data.test)?;
    let outcome = run_progressive(
        &base.model,
        &data.train,
        &data.validation,
        &config.progressive,
        config.quantize_seed(),
    )?;
    let test_accuracy = evaluate(&outcome.model, &data.test)?;
    let state = &outcome.state;
    let layers = layer_reports(&outcome.model, Some(&outcome.scheme));
    let summary = QuantizeSummary {
        seed: config.seed,
        baseline_test_accuracy,
        baseline_validation_accuracy: state.baseline_accuracy,
        test_accuracy,
        validation_accuracy: state.best_accuracy(),
        best_step: state.best.as_ref().map(|c| c.step),
        effective_bits_per_weight: effective_bits(&layers),
        layers,
        steps: state.history.clone(),
    };

    let mut ck = Checkpoint::new(
        outcome.model.clone(),
        Some(outcome.scheme.clone()),
        config_value(config)?,
    )
    .with_metric("test_accuracy", test_accuracy)
    .with_progressive(ProgressiveSummary {
        baseline_accuracy: state.baseline_accuracy,
        best_accuracy: state.best_accuracy(),
        best_step: summary.best_step,
        steps: state.history.clone(),
    });
    if let Some(v) = summary.validation_accuracy {
        ck = ck.with_metric("validation_accuracy", v);
    }
    ck.save(out)?;
    let trace_path = out.join(TRACE_FILE);
    let file = fs::File::create(&trace_path).map_err(|e| Error::Io {
        path: trace_path.clone(),
        source: e,
    })?;
    outcome
        .trace
        .write_csv(std::io::BufWriter::new(file))
        .map_err(|e| Error::Io {
            path: trace_path,
            source: e,
        })?;
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

pub fn evaluate_checkpoint(config: &RunConfig, checkpoint: &Checkpoint) -> Result<EvaluateReport> {
    let test = config.test_set()?;
    let test_accuracy = evaluate(&checkpoint.model, &test)?;
    let layers = layer_reports(&checkpoint.model, checkpoint.scheme());
    Ok(EvaluateReport {
        test_accuracy,
        test_samples: test.len(),
        quantized: checkpoint.is_quantized(),
        effective_bits_per_weight: effective_bits(&layers),
        layers,
    })
}

pub fn export(checkpoint: &Checkpoint, out: &Path) -> Result<ExportReport> {
    let scheme = checkpoint
        .scheme()
        .ok_or_else(|| Error::Checkpoint("only quantized checkpoints can be exported".into()))?;
    let packed = pack_model(&checkpoint.model, scheme)?;
    let bytes = pack::encode(&packed);
    fs::write(out, &bytes).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let stats = pack_stats(&packed);
    Ok(ExportReport {
        file_bytes: stats.file_bytes,
        weight_payload_bytes: stats.weight_payload_bytes,
        weight_f64_bytes: stats.weight_f64_bytes,
        compression_vs_f64: stats.weight_f64_bytes as f64 / stats.weight_payload_bytes as f64,
    })
}

pub fn layer_reports(model: &Model, scheme: Option<&QuantScheme>) -> Vec<LayerReport> {
    model
        .weights()
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let (mode, alpha) = scheme.map_or((QuantMode::Excluded, None), |s| {
                (s.layers[i].mode, s.layers[i].alpha)
            });
            let histogram = match alpha {
                Some(a) if mode.is_quantized() => mode
                    .levels(a)
                    .into_iter()
                    .map(|value| LevelCount {
                        value,
                        count: w.data().iter().filter(|&&x| x == value).count(),
                    })
                    .collect(),
                _ => Vec::new(),
            };
            LayerReport {
                layer: i,
                mode,
                alpha,
                weights: w.len(),
                bits_per_weight: mode.bits_per_weight(),
                histogram,
            }
        })
        .collect()
}

fn effective_bits(layers: &[LayerReport]) -> f64 {
    let weights: usize = layers.iter().map(|l| l.weights).sum();
    let bits: usize = layers
        .iter()
        .map(|l| l.weights * l.bits_per_weight as usize)
        .sum();
    bits as f64 / weights as f64
}
