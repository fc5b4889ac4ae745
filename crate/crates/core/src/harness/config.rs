use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::grid::GridSpec;
use crate::crnn::{FreqIntegration, LossVariant, ModelConfig, TrainConfig};
use crate::denoise::DenoiseConfig;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::resample::ResampleConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
    /// Target class; one network is trained per class.
    pub class: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSection {
    pub segment_frames: usize,
    /// Decision threshold for F1.
    pub threshold: f64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            segment_frames: 500,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleSection {
    pub enabled: bool,
    pub undersample_fraction: f64,
    pub oversample_duplications: usize,
}

impl Default for ResampleSection {
    fn default() -> Self {
        let d = ResampleConfig::default();
        Self {
            enabled: false,
            undersample_fraction: d.undersample_fraction,
            oversample_duplications: d.oversample_duplications,
        }
    }
}

impl ResampleSection {
    pub fn to_config(&self, seed: u64) -> ResampleConfig {
        if self.enabled {
            ResampleConfig {
                undersample_fraction: self.undersample_fraction,
                oversample_duplications: self.oversample_duplications,
                seed,
            }
        } else {
            ResampleConfig { seed, ..ResampleConfig::none() }
        }
    }
}

/// Network architecture without the data-dependent input shape.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchSection {
    pub conv_depth: usize,
    pub channel_size: usize,
    pub pool_size: usize,
    pub freq_integration: FreqIntegration,
    pub bidirectional: bool,
}

impl Default for ArchSection {
    fn default() -> Self {
        Self {
            conv_depth: 2,
            channel_size: 96,
            pool_size: 2,
            freq_integration: FreqIntegration::GlobalAverage,
            bidirectional: true,
        }
    }
}

impl ArchSection {
    pub fn model_config(&self, input_frames: usize, input_bands: usize) -> ModelConfig {
        ModelConfig {
            conv_depth: self.conv_depth,
            channel_size: self.channel_size,
            pool_size: self.pool_size,
            freq_integration: self.freq_integration,
            bidirectional: self.bidirectional,
            input_frames,
            input_bands,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSection {
    pub variant: LossVariant,
    pub gamma: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            variant: LossVariant::Bce,
            gamma: 2.0,
        }
    }
}

/// Full configuration of one pipeline run; sections mirror module names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSection,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub denoise: DenoiseConfig,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub resample: ResampleSection,
    #[serde(default)]
    pub model: ArchSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub grid: Option<GridSpec>,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses the file and resolves relative data paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            for p in [&mut cfg.data.train, &mut cfg.data.val, &mut cfg.data.test] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Checks parameters and that every data directory exists.
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("train", &self.data.train), ("val", &self.data.val), ("test", &self.data.test)] {
            if !p.is_dir() {
                return Err(Error::Config(format!("{name} data directory {} does not exist", p.display())));
            }
        }
        if self.data.class.is_empty() {
            return Err(Error::Config("data.class must name one target class".into()));
        }
        self.validate_params()
    }

    /// Checks everything except the data paths.
    pub fn validate_params(&self) -> Result<()> {
        self.denoise.validate()?;
        self.train.validate()?;
        self.resample.to_config(0).validate()?;
        if self.pipeline.segment_frames == 0 {
            return Err(Error::Config("pipeline.segment_frames must be positive".into()));
        }
        if !(self.loss.gamma >= 0.0) {
            return Err(Error::Config("loss.gamma must be non-negative".into()));
        }
        Ok(())
    }
}
