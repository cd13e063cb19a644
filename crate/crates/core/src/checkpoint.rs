//! On-disk checkpoints.
//!
//! A checkpoint is a directory holding `manifest.json` and `tensors.bin`. The
//! manifest records the architecture, the quantization scheme (if any), a
//! configuration snapshot, metrics and one entry per parameter tensor with its
//! byte range in `tensors.bin` (little-endian f64) and a SHA-256 digest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{ArchSpec, Model};
use crate::progressive::StepRecord;
use crate::quant::QuantScheme;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into `tensors.bin`.
    pub offset: u64,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgressiveSummary {
    pub baseline_accuracy: Option<f64>,
    pub best_accuracy: Option<f64>,
    pub best_step: Option<usize>,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub architecture: ArchSpec,
    /// Present for quantized checkpoints.
    pub scheme: Option<QuantScheme>,
    pub config: serde_json::Value,
    pub metrics: BTreeMap<String, f64>,
    pub progressive: Option<ProgressiveSummary>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(model: Model, scheme: Option<QuantScheme>, config: serde_json::Value) -> Self {
        Checkpoint {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                architecture: model.spec().clone(),
                scheme,
                config,
                metrics: BTreeMap::new(),
                progressive: None,
                tensors: Vec::new(),
            },
            model,
        }
    }

    pub fn is_quantized(&self) -> bool {
        self.manifest.scheme.is_some()
    }

    pub fn scheme(&self) -> Option<&QuantScheme> {
        self.manifest.scheme.as_ref()
    }

    pub fn with_metric(mut self, name: &str, value: f64) -> Self {
        self.manifest.metrics.insert(name.to_string(), value);
        self
    }

    pub fn with_progressive(mut self, summary: ProgressiveSummary) -> Self {
        self.manifest.progressive = Some(summary);
        self
    }

    /// Writes the checkpoint into `dir`, creating it if needed. Quantized
    /// weights are checked for feasibility first.
    pub fn save(&mut self, dir: &Path) -> Result<()> {
        if let Some(scheme) = &self.manifest.scheme {
            if let Some(layer) = scheme.first_infeasible(&self.model.weights()) {
                return Err(Error::Infeasible { layer });
            }
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut blob = Vec::new();
        let mut entries = Vec::new();
        for (i, t) in self.model.params().into_iter().enumerate() {
            let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            entries.push(TensorEntry {
                name: param_name(i),
                shape: t.shape().to_vec(),
                offset: blob.len() as u64,
                bytes: bytes.len() as u64,
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
            blob.extend_from_slice(&bytes);
        }
        self.manifest.tensors = entries;
        let tensors_path = dir.join(TENSORS_FILE);
        fs::write(&tensors_path, &blob).map_err(|e| Error::io(&tensors_path, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))
    }

    /// Reads a checkpoint, verifying every tensor digest and, for quantized
    /// checkpoints, that the weights lie in their level sets.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format version {}",
                manifest.format_version
            )));
        }
        let tensors_path = dir.join(TENSORS_FILE);
        let blob = fs::read(&tensors_path).map_err(|e| Error::io(&tensors_path, e))?;
        let mut params = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            let range = usize::try_from(e.offset)
                .ok()
                .zip(usize::try_from(e.bytes).ok())
                .and_then(|(o, n)| Some(o..o.checked_add(n)?))
                .filter(|r| r.end <= blob.len())
                .ok_or_else(|| {
                    Error::Checkpoint(format!("tensor {} lies outside {TENSORS_FILE}", e.name))
                })?;
            let bytes = &blob[range];
            if hex::encode(Sha256::digest(bytes)) != e.sha256 {
                return Err(Error::Checkpoint(format!(
                    "checksum mismatch for tensor {}",
                    e.name
                )));
            }
            if bytes.len() % 8 != 0 {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has a partial value",
                    e.name
                )));
            }
            let data = bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            params.push(Tensor::new(e.shape.clone(), data)?);
        }
        let mut model = Model::new(&manifest.architecture, 0)?;
        model.set_params(params)?;
        if let Some(scheme) = &manifest.scheme {
            scheme.validate()?;
            if scheme.len() != model.num_weight_layers() {
                return Err(Error::Checkpoint(format!(
                    "scheme covers {} layers, architecture has {}",
                    scheme.len(),
                    model.num_weight_layers()
                )));
            }
            if let Some(layer) = scheme.first_infeasible(&model.weights()) {
                return Err(Error::Infeasible { layer });
            }
        }
        Ok(Checkpoint { manifest, model })
    }
}

fn param_name(i: usize) -> String {
    let kind = if i % 2 == 0 { "weight" } else { "bias" };
    format!("layer{}.{kind}", i / 2)
}
