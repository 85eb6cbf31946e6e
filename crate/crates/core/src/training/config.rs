//! Run configuration, read from TOML.
//!
//! ```toml
//! epochs = 100
//! learning_rate = 1e-5
//! optimizer = "adam"
//! beta1 = 0.9
//! beta2 = 0.999
//! eps = 1e-8
//! loss = "dice_bce"          # or "focal_tversky"
//! seed = 0
//! batch_images = 1
//! checkpoint_every = 10      # epochs; 0 disables periodic checkpoints
//! record_wall_time = false
//!
//! [tversky]
//! alpha = 0.7
//! beta = 0.3
//! gamma = 1.3333333333333333
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossKind, TverskyParams};
use crate::nn::AdamConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossChoice {
    #[default]
    DiceBce,
    FocalTversky,
}

impl std::str::FromStr for LossChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dice_bce" => Ok(LossChoice::DiceBce),
            "focal_tversky" => Ok(LossChoice::FocalTversky),
            other => Err(Error::Config(format!("unknown loss `{other}` (dice_bce, focal_tversky)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub loss: LossChoice,
    pub tversky: TverskyParams,
    pub seed: u64,
    /// Images whose gradients are accumulated into one optimizer step.
    pub batch_images: usize,
    /// Periodic checkpoint interval in epochs; 0 disables it.
    pub checkpoint_every: usize,
    /// Adds elapsed seconds to every history record.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 100,
            learning_rate: adam.learning_rate,
            optimizer: OptimizerKind::Adam,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            loss: LossChoice::DiceBce,
            tversky: TverskyParams::default(),
            seed: 0,
            batch_images: 1,
            checkpoint_every: 10,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_images == 0 {
            return Err(Error::Config("batch_images must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be finite and >= 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config("adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
        }
        TverskyParams::new(self.tversky.alpha, self.tversky.beta, self.tversky.gamma)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.loss {
            LossChoice::DiceBce => LossKind::BceDice,
            LossChoice::FocalTversky => LossKind::FocalTversky(self.tversky),
        }
    }
}
