//! Run configuration: one TOML file describing data, split, kernel,
//! landmarks, model, loss, preconditioner and optimiser.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nyssl::data::SplitSpec;
use nyssl::kernels::KernelSpec;
use nyssl::landmarks::{LandmarkMethod, LeverageConfig};
use nyssl::losses::LossSpec;
use nyssl::model::InitMethod;
use nyssl::precondition::PrecondSpec;
use nyssl::trainer::search::SearchSpace;
use nyssl::trainer::TrainConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    /// Parent directory for outputs; results go to `{out}/{name}/`.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Seeds augmentation, landmark selection, initialisation and batching.
    #[serde(default)]
    pub seed: u64,
    pub data: DataSection,
    #[serde(default = "default_split")]
    pub split: SplitSpec,
    pub kernel: KernelSpec,
    pub landmarks: LandmarkSection,
    pub model: ModelSection,
    pub loss: LossSpec,
    #[serde(default)]
    pub precond: PrecondSpec,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub search: SearchSpace,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_split() -> SplitSpec {
    SplitSpec { train_fraction: 0.7, probe_label_fraction: 0.1, validation_fraction: 0.0, seed: 0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
    #[serde(default)]
    pub label_column: Option<String>,
    #[serde(default = "yes")]
    pub standardize: bool,
    /// Number of views per sample; view 0 is the original row.
    #[serde(default = "two")]
    pub views: usize,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub drop_prob: f64,
}

fn yes() -> bool {
    true
}
fn two() -> usize {
    2
}
fn default_noise() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkSection {
    pub method: LandmarkMethod,
    pub m: usize,
    #[serde(default)]
    pub leverage: LeverageConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub h: usize,
    #[serde(default)]
    pub init: InitMethod,
}

/// Optimiser settings; loss and preconditioner live in their own sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr_init: f64,
    pub lr_min: f64,
    pub warmup_epochs: f64,
    pub anneal_epochs: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            lr_init: d.lr_init,
            lr_min: d.lr_min,
            warmup_epochs: d.warmup_epochs,
            anneal_epochs: d.anneal_epochs,
            max_epochs: d.max_epochs,
            patience: d.patience,
            batch_size: d.batch_size,
            weight_decay: d.weight_decay,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> CliResult<Self> {
        toml::from_str(text).map_err(|source| CliError::Toml { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text, path)?;
        if cfg.data.path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.data.path = dir.join(&cfg.data.path);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run configs always serialise")
    }

    /// Applies command-line overrides; `seed` replaces both the run seed and
    /// the split seed.
    pub fn with_overrides(mut self, out: Option<&Path>, seed: Option<u64>) -> Self {
        if let Some(out) = out {
            self.out = out.to_path_buf();
        }
        if let Some(seed) = seed {
            self.seed = seed;
            self.split.seed = seed;
        }
        self
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr_init: t.lr_init,
            lr_min: t.lr_min,
            warmup_epochs: t.warmup_epochs,
            max_epochs: t.max_epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            seed: self.seed,
            weight_decay: t.weight_decay,
            anneal_epochs: t.anneal_epochs,
            loss: self.loss.clone(),
            precond: self.precond,
        }
    }

    pub fn with_train_config(&self, t: &TrainConfig) -> Self {
        let mut cfg = self.clone();
        cfg.train = TrainSection {
            lr_init: t.lr_init,
            lr_min: t.lr_min,
            warmup_epochs: t.warmup_epochs,
            anneal_epochs: t.anneal_epochs,
            max_epochs: t.max_epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            weight_decay: t.weight_decay,
        };
        cfg.loss = t.loss.clone();
        cfg.precond = t.precond;
        cfg
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(&self.name)
    }

    /// Checks every field that can be checked without reading the data.
    pub fn validate(&self) -> CliResult<()> {
        let field = |name: &str, e: nyssl::Error| CliError::config(format!("{name}: {e}"));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == "." || self.name == ".." {
            return Err(CliError::config("name: must be a non-empty single path component"));
        }
        if !self.data.path.is_file() {
            return Err(CliError::config(format!("data.path: {} does not exist", self.data.path.display())));
        }
        if self.data.views == 0 {
            return Err(CliError::config("data.views: at least one view is required"));
        }
        if !(0.0..1.0).contains(&self.data.drop_prob) {
            return Err(CliError::config("data.drop_prob: must lie in [0, 1)"));
        }
        if !(self.data.noise_sigma >= 0.0 && self.data.noise_sigma.is_finite()) {
            return Err(CliError::config("data.noise_sigma: must be finite and nonnegative"));
        }
        self.split.validate().map_err(|e| field("split", e))?;
        self.kernel.validate().map_err(|e| field("kernel", e))?;
        if self.landmarks.m == 0 {
            return Err(CliError::config("landmarks.m: must be at least 1"));
        }
        if self.model.h == 0 {
            return Err(CliError::config("model.h: must be at least 1"));
        }
        if self.model.h > self.landmarks.m * self.data.views {
            return Err(CliError::config("model.h: cannot exceed the number of landmark rows (m * views)"));
        }
        self.train_config().validate().map_err(|e| field("train", e))?;
        if self.loss.kind.name() != "kpca" && self.loss.kind.name() != "kae" && self.data.views < 2 {
            return Err(CliError::config(format!("data.views: {} needs at least two views", self.loss.kind.name())));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        config_hash(&serde_json::to_value(self).expect("run configs always serialise"))
    }
}

pub fn config_hash(value: &serde_json::Value) -> String {
    let text = serde_json::to_string(value).expect("JSON values always serialise");
    hex::encode(Sha256::digest(text.as_bytes()))
}
