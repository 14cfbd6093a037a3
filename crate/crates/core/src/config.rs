//! Flat `key = value` training configuration.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::network::NetworkConfig;
use crate::optim::AdamWConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Epochs between learning-rate halvings.
    pub lr_halve_every: u64,
    pub epochs: u64,
    pub batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_opt: f64,
    pub weight_decay: f64,
    /// Side of the square training crops.
    pub crop: usize,
    pub flip: bool,
    pub seed: u64,
    /// Also write the checkpoint every this many epochs; 0 writes only at
    /// the end.
    pub checkpoint_every: u64,
    /// Worker threads for the kernels; 0 uses every core. Results do not
    /// depend on it.
    pub threads: usize,
    #[serde(flatten)]
    pub loss: LossWeights,
    #[serde(flatten)]
    pub net: NetworkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            lr_halve_every: 500,
            epochs: 3000,
            batch: 2,
            beta1: 0.9,
            beta2: 0.9,
            eps_opt: 1e-8,
            weight_decay: 0.0,
            crop: 64,
            flip: true,
            seed: 0,
            checkpoint_every: 0,
            threads: 0,
            loss: LossWeights::default(),
            net: NetworkConfig::default(),
        }
    }
}

fn known_keys() -> BTreeSet<String> {
    toml::Table::try_from(TrainConfig::default())
        .map(|t| t.keys().cloned().collect())
        .unwrap_or_default()
}

impl TrainConfig {
    /// A narrow network and a high learning rate for quick runs on small
    /// 64×64 corpora.
    pub fn toy() -> Self {
        TrainConfig {
            lr0: 4e-3,
            lr_halve_every: 10_000,
            epochs: 500,
            batch: 2,
            flip: false,
            net: NetworkConfig {
                base_channels: 8,
                rcab_count: 2,
                ..NetworkConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps_opt,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if !(self.eps_opt > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("eps_opt must be positive and weight_decay non-negative");
        }
        if self.crop == 0 || !self.crop.is_multiple_of(NetworkConfig::SIZE_MULTIPLE) {
            return bad("crop must be a positive multiple of 8");
        }
        self.loss.validate()?;
        self.net.validate()
    }

    /// Parses and validates; unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let known = known_keys();
        let unknown: Vec<&String> = table.keys().filter(|k| !known.contains(*k)).collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {unknown:?}")));
        }
        let cfg: TrainConfig = table
            .try_into()
            .map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
