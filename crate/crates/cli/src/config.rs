use std::path::{Path, PathBuf};

use admmq_core::data::{load_mnist, synth_blobs_with_std};
use admmq_core::rng::derive_seed;
use admmq_core::{ArchSpec, Dataset, Error, ProgressiveConfig, Result, Split, TrainConfig};
use serde::{Deserialize, Serialize};

/// Everything a run needs. Loaded from JSON; every field has a default and
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    pub architecture: ArchSpec,
    pub data: DataConfig,
    pub pretrain: TrainConfig,
    pub progressive: ProgressiveConfig,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            architecture: ArchSpec::lenet5(),
            data: DataConfig::default(),
            pretrain: TrainConfig::default(),
            progressive: ProgressiveConfig::default(),
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Samples held out of the training file for step selection.
    pub validation_size: usize,
    /// Stratified training subset drawn from what remains; `None` keeps all of it.
    pub train_subset: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Mnist {
                dir: PathBuf::from("data/mnist"),
            },
            validation_size: 5000,
            train_subset: Some(10_000),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Directory holding the four standard IDX files, plain or gzipped.
    Mnist { dir: PathBuf },
    /// Synthetic Gaussian clusters; handy for smoke runs.
    Blobs {
        classes: usize,
        per_class: usize,
        test_per_class: usize,
        features: usize,
        std: f64,
        seed: u64,
    },
}

pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.architecture.layers.is_empty() {
            return Err(Error::Config("architecture has no layers".into()));
        }
        self.pretrain.validate()?;
        self.progressive.validate()?;
        if self.data.validation_size == 0 {
            return Err(Error::Config("validation_size must be at least 1".into()));
        }
        if self.data.train_subset == Some(0) {
            return Err(Error::Config("train_subset must be at least 1".into()));
        }
        if let DataSource::Blobs { std, .. } = self.data.source {
            if !(std >= 0.0 && std.is_finite()) {
                return Err(Error::Config(format!(
                    "blob std must be finite and non-negative, got {std}"
                )));
            }
        }
        Ok(())
    }

    /// Points an MNIST source at `dir`.
    pub fn set_dataset_dir(&mut self, dir: PathBuf) -> Result<()> {
        match &mut self.data.source {
            DataSource::Mnist { dir: d } => {
                *d = dir;
                Ok(())
            }
            DataSource::Blobs { .. } => Err(Error::Config(
                "--dataset given but the data source is blobs".into(),
            )),
        }
    }

    /// Train and test files before any splitting.
    fn raw(&self) -> Result<(Dataset, Dataset)> {
        match &self.data.source {
            DataSource::Mnist { dir } => Ok((
                load_mnist(dir, Split::Train)?,
                load_mnist(dir, Split::Test)?,
            )),
            &DataSource::Blobs {
                classes,
                per_class,
                test_per_class,
                features,
                std,
                seed,
            } => Ok((
                synth_blobs_with_std(classes, per_class, features, std, seed)?,
                synth_blobs_with_std(classes, test_per_class, features, std, derive_seed(seed, 1))?
                    .with_split(Split::Test),
            )),
        }
    }

    pub fn test_set(&self) -> Result<Dataset> {
        Ok(self.raw()?.1)
    }

    /// Validation is held out of the training file, then the training subset
    /// is drawn from the rest. The test file is untouched.
    pub fn splits(&self) -> Result<Splits> {
        let (train_file, test) = self.raw()?;
        if self.data.validation_size >= train_file.len() {
            return Err(Error::Dataset(format!(
                "validation_size {} leaves no training data out of {}",
                self.data.validation_size,
                train_file.len()
            )));
        }
        let (rest, validation) =
            train_file.split_validation(self.data.validation_size, derive_seed(self.seed, 1))?;
        let train = match self.data.train_subset {
            Some(n) if n < rest.len() => rest.subset(n, derive_seed(self.seed, 2))?,
            _ => rest,
        };
        Ok(Splits {
            train,
            validation,
            test,
        })
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, 3)
    }

    pub fn train_seed(&self) -> u64 {
        derive_seed(self.seed, 4)
    }

    pub fn quantize_seed(&self) -> u64 {
        derive_seed(self.seed, 5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_round_trips() {
        let c = RunConfig::default();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 3}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(
            r#"{"progressive": {"admm": {"rho": {"grwth": 2}}}}"#
        )
        .is_err());
        let c: RunConfig = serde_json::from_str(r#"{"seed": 3}"#).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.architecture, ArchSpec::lenet5());
    }

    #[test]
    fn shipped_lenet_recipe_is_valid() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/lenet5-binary.json");
        let c = RunConfig::from_file(&path).unwrap();
        assert_eq!(c.architecture, ArchSpec::lenet5());
        assert_eq!(c.progressive.epoch_budget(), 60);
    }
}
