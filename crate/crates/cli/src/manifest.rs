//! Run manifest: everything needed to reconstruct a run from its directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use nyssl::data::{Split, Standardizer};
use nyssl::trainer::StopReason;

use crate::config::{config_hash, RunConfig};
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub nyssl: String,
    pub cli: String,
    pub model_format: u32,
}

impl Versions {
    pub fn current() -> Self {
        Self {
            nyssl: nyssl::VERSION.to_string(),
            cli: env!("CARGO_PKG_VERSION").to_string(),
            model_format: nyssl::model::VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: usize,
    pub initial_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub best_loss: Option<f64>,
    pub stop_reason: StopReason,
    pub effective_rank: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
    /// JSON mirror of the effective run configuration.
    pub config: serde_json::Value,
    pub data_path: PathBuf,
    pub label_names: Vec<String>,
    /// Present when features were standardised with train-split statistics.
    pub standardizer: Option<Standardizer>,
    pub split: Split,
    pub training: Option<TrainingSummary>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(cfg: &RunConfig, label_names: Vec<String>, standardizer: Option<Standardizer>, split: Split) -> Self {
        Self {
            name: cfg.name.clone(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            versions: Versions::current(),
            config: serde_json::to_value(cfg).expect("run configs always serialise"),
            data_path: cfg.data.path.clone(),
            label_names,
            standardizer,
            split,
            training: None,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(nyssl::Error::from)?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(path, e))
    }

    /// Reads a manifest and checks that the stored hash matches the stored
    /// configuration.
    pub fn read(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(nyssl::Error::from)?;
        let actual = config_hash(&manifest.config);
        if actual != manifest.config_hash {
            return Err(CliError::config(format!(
                "{}: config hash {} does not match stored {}",
                path.display(),
                actual,
                manifest.config_hash
            )));
        }
        Ok(manifest)
    }

    pub fn run_config(&self) -> CliResult<RunConfig> {
        serde_json::from_value(self.config.clone()).map_err(|e| CliError::Core(e.into()))
    }
}
