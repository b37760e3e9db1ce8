use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::Precision;

/// Training-time augmentation. Each enabled transform fires independently
/// with probability `probability`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub blur: bool,
    pub jpeg: bool,
    pub probability: f64,
    pub blur_sigma: (f64, f64),
    pub jpeg_quality: (u8, u8),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            hflip: true,
            blur: true,
            jpeg: true,
            probability: 0.5,
            blur_sigma: (0.5, 1.5),
            jpeg_quality: (60, 95),
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            hflip: false,
            blur: false,
            jpeg: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub precision: Precision,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            lr_min: 0.0,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            precision: Precision::F32,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(0.0..=self.learning_rate).contains(&self.lr_min) {
            return fail(format!("lr_min {} must lie in [0, learning_rate]", self.lr_min));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        let a = &self.augment;
        if !(0.0..=1.0).contains(&a.probability) {
            return fail(format!("augment.probability {} outside [0, 1]", a.probability));
        }
        if !(a.blur_sigma.0 > 0.0 && a.blur_sigma.0 <= a.blur_sigma.1) {
            return fail(format!("augment.blur_sigma {:?} is not a positive range", a.blur_sigma));
        }
        if !(1 <= a.jpeg_quality.0 && a.jpeg_quality.0 <= a.jpeg_quality.1 && a.jpeg_quality.1 <= 100) {
            return fail(format!("augment.jpeg_quality {:?} is not a range within 1..=100", a.jpeg_quality));
        }
        Ok(())
    }
}

/// The JSON document accepted by `esf train --config`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}
