use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial size of every convolution kernel (time x frequency).
pub const KERNEL: usize = 5;

/// How the frequency axis is folded into channels before the recurrent layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreqIntegration {
    Flatten,
    GlobalAverage,
    GlobalMax,
}

impl FreqIntegration {
    pub const ALL: [FreqIntegration; 3] = [
        FreqIntegration::Flatten,
        FreqIntegration::GlobalAverage,
        FreqIntegration::GlobalMax,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FreqIntegration::Flatten => "flatten",
            FreqIntegration::GlobalAverage => "global-average",
            FreqIntegration::GlobalMax => "global-max",
        }
    }
}

impl fmt::Display for FreqIntegration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FreqIntegration {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "flatten" => Ok(Self::Flatten),
            "global-average" | "gap" => Ok(Self::GlobalAverage),
            "global-max" | "gmp" => Ok(Self::GlobalMax),
            other => Err(Error::Config(format!("unknown frequency integration `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub conv_depth: usize,
    /// Filters per conv layer and total units of the recurrent layer.
    pub channel_size: usize,
    /// Size and stride of every frequency max-pool.
    pub pool_size: usize,
    pub freq_integration: FreqIntegration,
    pub bidirectional: bool,
    pub input_frames: usize,
    pub input_bands: usize,
}

impl ModelConfig {
    /// Band counts entering each conv layer, followed by the count after the
    /// final pool. Floor division; a zero means the config is infeasible.
    pub fn band_chain(&self) -> Vec<usize> {
        let mut chain = vec![self.input_bands];
        let mut f = self.input_bands;
        for _ in 0..self.conv_depth {
            f /= self.pool_size.max(1);
            chain.push(f);
        }
        chain
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_depth == 0 {
            return Err(Error::Config("conv_depth must be at least 1".into()));
        }
        if self.channel_size == 0 {
            return Err(Error::Config("channel_size must be at least 1".into()));
        }
        if self.pool_size < 2 {
            return Err(Error::Config("pool_size must be at least 2".into()));
        }
        if self.bidirectional && self.channel_size % 2 != 0 {
            return Err(Error::Config(format!(
                "bidirectional layer needs an even channel_size, got {}",
                self.channel_size
            )));
        }
        if self.input_frames == 0 || self.input_bands == 0 {
            return Err(Error::Config("input must have at least one frame and band".into()));
        }
        let chain = self.band_chain();
        if chain.last() == Some(&0) {
            let s: Vec<String> = chain.iter().map(usize::to_string).collect();
            return Err(Error::Config(format!(
                "pooling reduces {} bands to zero ({})",
                self.input_bands,
                s.join("->")
            )));
        }
        Ok(())
    }

    pub fn conv_out_bands(&self) -> usize {
        *self.band_chain().last().unwrap()
    }

    /// Width of the per-frame vector fed to the recurrent layer.
    pub fn integration_dim(&self) -> usize {
        match self.freq_integration {
            FreqIntegration::Flatten => self.conv_out_bands() * self.channel_size,
            _ => self.channel_size,
        }
    }

    /// Units per recurrent direction.
    pub fn hidden_per_direction(&self) -> usize {
        if self.bidirectional {
            self.channel_size / 2
        } else {
            self.channel_size
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossVariant {
    Bce,
    WeightedBce,
    Focal,
    WeightedFocal,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] = [
        LossVariant::Bce,
        LossVariant::WeightedBce,
        LossVariant::Focal,
        LossVariant::WeightedFocal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossVariant::Bce => "bce",
            LossVariant::WeightedBce => "weighted-bce",
            LossVariant::Focal => "focal",
            LossVariant::WeightedFocal => "weighted-focal",
        }
    }

    pub fn is_weighted(self) -> bool {
        matches!(self, LossVariant::WeightedBce | LossVariant::WeightedFocal)
    }

    pub fn is_focal(self) -> bool {
        matches!(self, LossVariant::Focal | LossVariant::WeightedFocal)
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bce" => Ok(Self::Bce),
            "weighted-bce" | "wbce" => Ok(Self::WeightedBce),
            "focal" | "fl" => Ok(Self::Focal),
            "weighted-focal" | "wfl" => Ok(Self::WeightedFocal),
            other => Err(Error::Config(format!("unknown loss variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Segments per mini-batch.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 100,
            early_stop_patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if !positive || self.batch_size == 0 || self.max_epochs == 0 || self.early_stop_patience == 0 {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(depth: usize, pool: usize, bands: usize) -> ModelConfig {
        ModelConfig {
            conv_depth: depth,
            channel_size: 96,
            pool_size: pool,
            freq_integration: FreqIntegration::GlobalAverage,
            bidirectional: true,
            input_frames: 500,
            input_bands: bands,
        }
    }

    #[test]
    fn band_chains() {
        assert_eq!(cfg(2, 2, 5).band_chain(), vec![5, 2, 1]);
        assert!(cfg(2, 2, 5).validate().is_ok());
        assert_eq!(cfg(4, 5, 39).band_chain(), vec![39, 7, 1, 0, 0]);
        assert!(matches!(cfg(4, 5, 39).validate(), Err(Error::Config(_))));
        assert_eq!(cfg(2, 2, 80).band_chain(), vec![80, 40, 20]);
    }

    #[test]
    fn structural_constraints() {
        let mut c = cfg(2, 2, 80);
        c.channel_size = 33;
        assert!(c.validate().is_err());
        c.bidirectional = false;
        assert!(c.validate().is_ok());
        c.pool_size = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn names_round_trip() {
        for v in LossVariant::ALL {
            assert_eq!(v.as_str().parse::<LossVariant>().unwrap(), v);
        }
        for v in FreqIntegration::ALL {
            assert_eq!(v.as_str().parse::<FreqIntegration>().unwrap(), v);
        }
        assert_eq!("GAP".parse::<FreqIntegration>().unwrap(), FreqIntegration::GlobalAverage);
    }
}
