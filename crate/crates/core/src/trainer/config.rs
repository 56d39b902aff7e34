use serde::{Deserialize, Serialize};

use super::nadam::NAdamConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub loss: LossWeights,
    /// Run every kernel on one worker thread.
    pub deterministic: bool,
    /// Draw one of the eight augmentation transforms per scan and epoch.
    pub augment: bool,
    /// Draw each epoch's scans class-uniformly (with replacement) instead of one
    /// pass over the training set; the epoch length is unchanged.
    pub balance_classes: bool,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let opt = NAdamConfig::default();
        TrainConfig {
            lr: opt.lr,
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            batch_size: 4,
            max_epochs: 150,
            patience: 20,
            seed: 0,
            loss: LossWeights::default(),
            deterministic: false,
            augment: true,
            balance_classes: false,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> NAdamConfig {
        NAdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.patience == 0 || self.patience >= self.max_epochs {
            return Err(Error::Config(format!(
                "patience must be in [1, max_epochs), got {} with max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        self.optimizer().validate()?;
        self.loss.validate()
    }
}
