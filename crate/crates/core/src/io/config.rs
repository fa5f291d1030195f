//! Experiment configuration in TOML. Unknown keys are rejected.
//!
//! ```toml
//! seed = 7
//! [model]
//! enc_layers = 2
//! ...
//! [train]
//! batch_frames = 1000
//! [data]
//! noise = 0.2
//! [quant]
//! calibration_steps = 1000
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synth::SynthTaskSpec;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};
use crate::train::TrainConfig;

/// Corpus sizes for the synthetic task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    #[serde(flatten)]
    pub task: SynthTaskSpec,
    pub train_utterances: usize,
    pub test_utterances: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            task: SynthTaskSpec::default(),
            train_utterances: 4000,
            test_utterances: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantConfig {
    pub bits: u32,
    pub momentum: f64,
    /// Forward passes used to calibrate activation ranges after training.
    pub calibration_steps: usize,
    /// Frame budget of a calibration batch.
    pub calibration_batch_frames: usize,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            bits: crate::quant::DEFAULT_BITS,
            momentum: crate::quant::DEFAULT_MOMENTUM,
            calibration_steps: 1000,
            calibration_batch_frames: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub max_len: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { max_len: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub quant: QuantConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    /// Everything sized for a desk-scale run on the synthetic task.
    pub fn toy(variant: Variant) -> Self {
        Self {
            seed: 0,
            model: ModelConfig::toy(variant),
            train: TrainConfig::toy(),
            data: DataConfig::default(),
            quant: QuantConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn paper(variant: Variant) -> Self {
        let model = ModelConfig::paper(variant);
        let mut data = DataConfig::default();
        data.task.feature_dim = model.feature_dim;
        Self {
            model,
            train: TrainConfig::default(),
            data,
            ..Self::toy(variant)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.task.validate()?;
        if self.data.task.vocab_size > self.model.vocab_size {
            return Err(Error::Config(format!(
                "data vocabulary {} exceeds model vocabulary {}",
                self.data.task.vocab_size, self.model.vocab_size
            )));
        }
        if self.data.task.feature_dim != self.model.feature_dim {
            return Err(Error::Config(format!(
                "data feature_dim {} differs from model feature_dim {}",
                self.data.task.feature_dim, self.model.feature_dim
            )));
        }
        if self.eval.max_len == 0 {
            return Err(Error::Config("eval.max_len must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_unknown_keys() {
        let c = ExperimentConfig::toy(Variant::Proposed);
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), c);
        let typo = text.replace("grad_clip", "grad_clipp");
        assert!(ExperimentConfig::parse(&typo).is_err());
        let typo = text.replace("noise", "nosie");
        assert!(ExperimentConfig::parse(&typo).is_err());
    }

    #[test]
    fn shipped_configs_match_the_presets() {
        let toy = ExperimentConfig::parse(include_str!("../../../../configs/toy.toml")).unwrap();
        assert_eq!(toy, ExperimentConfig::toy(Variant::Proposed));
        let paper = ExperimentConfig::parse(include_str!("../../../../configs/paper.toml")).unwrap();
        assert_eq!(paper, ExperimentConfig::paper(Variant::Proposed));
    }

    #[test]
    fn feature_dims_must_agree() {
        let mut c = ExperimentConfig::toy(Variant::Proposed);
        c.data.task.feature_dim = 80;
        assert!(c.validate().is_err());
    }
}
