use std::path::Path;

use serde::{Deserialize, Serialize};

use protoseg_core::loss::LossConfig;
use protoseg_core::ModelConfig;

use crate::error::{Error, Result};

/// Default seed for every command; printed so runs can be repeated.
pub const DEFAULT_SEED: u64 = 20240117;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch: 16,
            epochs: 30,
        }
    }
}

/// Everything needed to reproduce a run; embedded in checkpoints and reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults overridden by whatever keys the JSON document sets.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.train.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if !(self.train.lr >= 0.0) {
            return Err(Error::Config("lr must be >= 0".into()));
        }
        if !(self.loss.lambda >= 0.0) {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
