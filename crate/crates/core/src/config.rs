//! Run configuration shared by training, sampling and the command line.

use serde::{Deserialize, Serialize};

use crate::backbone::ModelConfig;
use crate::ctmc::{NoiseSchedule, ReferenceKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub alpha: f64,
    pub gamma: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub reference: ReferenceKind,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            gamma: 5.0,
            horizon: 1.0,
            reference: ReferenceKind::Marginal,
        }
    }
}

impl NoiseConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.alpha, self.gamma, self.horizon).map_err(|e| Error::Config(format!("noise: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm ceiling.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            weight_decay: 0.0,
            batch_size: 8,
            epochs: 100,
            seed: 0,
            grad_clip: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("train.lr {} must be a finite nonnegative number", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("train.weight_decay {} must be nonnegative", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config(format!("train.grad_clip {} must be positive", self.grad_clip)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub steps: usize,
    pub count: usize,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            count: 64,
            seed: 0,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("sample.steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub noise: NoiseConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.noise.schedule()?;
        self.model.validate()?;
        self.train.validate()?;
        self.sample.validate()
    }
}
