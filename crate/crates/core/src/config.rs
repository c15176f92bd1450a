//! One JSON document configuring a whole run.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{Preprocess, SamplingSpec};
use crate::detection::{EventSpec, MetricSpec};
use crate::error::{CoreError, Result};
use crate::models::{ModelConfig, ModelSpec};
use crate::physval::PhysvalSpec;
use crate::stats::StatsSpec;
use crate::training::TrainingConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataio: Preprocess,
    pub sampling: SamplingSpec,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub metric: MetricSpec,
    pub events: EventSpec,
    pub physval: PhysvalSpec,
    pub stats: StatsSpec,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let wrap = |e: CoreError| match e {
            CoreError::InputDomain(m) => CoreError::Config(m),
            other => other,
        };
        self.dataio.validate().map_err(wrap)?;
        self.sampling.validate().map_err(wrap)?;
        self.model_spec().validate().map_err(wrap)?;
        self.training.validate()?;
        self.metric.validate().map_err(wrap)?;
        self.events.validate().map_err(wrap)?;
        self.physval.validate().map_err(wrap)?;
        self.stats.validate().map_err(wrap)?;
        Ok(())
    }

    /// Model geometry follows the sampling depth and the preprocessed frame size.
    pub fn model_spec(&self) -> ModelSpec {
        let (h, w) = self.dataio.out_size;
        self.model.spec([self.sampling.frames_per_sample, h, w])
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.model_spec().input, [16, 64, 64]);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = RunConfig::from_json(r#"{"training": {"epochs": 3, "adam": {"learning_rate": 0.01}}}"#).unwrap();
        assert_eq!(cfg.training.epochs, 3);
        assert_eq!(cfg.training.adam.learning_rate, 0.01);
        assert_eq!(cfg.training.adam.beta1, 0.975);
        assert_eq!(cfg.training.batch_size, 8);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"modle": {}}"#), Err(CoreError::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"training": {"epoch": 3}}"#), Err(CoreError::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"training": {"split_fraction": 1.0}}"#), Err(CoreError::Config(_))));
        // 30 is not a multiple of 4
        assert!(matches!(RunConfig::from_json(r#"{"dataio": {"out_size": [30, 32]}}"#), Err(CoreError::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"physval": {"canny": {"low": 0.5}}}"#), Err(CoreError::Config(_))));
    }
}
