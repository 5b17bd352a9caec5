use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AdamWConfig;

/// Architecture of the time-conditioned UNet restorer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RestorerConfig {
    /// Width of each resolution level; one downsampling between levels.
    pub channels_per_level: Vec<usize>,
    /// First level (1-indexed) that carries self-attention; every deeper
    /// level, the bottleneck and the mirrored decoder levels carry it too.
    pub attention_from_level: usize,
    pub time_embed_dim: usize,
    pub input_size: usize,
    pub norm_groups: usize,
}

impl RestorerConfig {
    /// Desk-scale defaults for 64x64 inputs.
    pub fn desk() -> Self {
        RestorerConfig {
            channels_per_level: vec![16, 32, 48, 64],
            attention_from_level: 3,
            time_embed_dim: 64,
            input_size: 64,
            norm_groups: 8,
        }
    }

    /// Full-size configuration: six levels, 128x128 patches.
    pub fn full() -> Self {
        RestorerConfig {
            channels_per_level: vec![32, 64, 96, 128, 256, 256],
            attention_from_level: 3,
            time_embed_dim: 128,
            input_size: 128,
            norm_groups: 32,
        }
    }

    pub fn levels(&self) -> usize {
        self.channels_per_level.len()
    }

    pub fn has_attention(&self, level: usize) -> bool {
        level + 1 >= self.attention_from_level
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        let ch = &self.channels_per_level;
        if ch.len() < 2 {
            return err(format!("need at least 2 levels, got {}", ch.len()));
        }
        if ch.contains(&0) {
            return err("channel widths must be positive".into());
        }
        let factor = 1usize << (ch.len() - 1);
        if self.input_size == 0 || self.input_size % factor != 0 {
            return err(format!(
                "input_size {} not divisible by 2^(levels-1) = {factor}",
                self.input_size
            ));
        }
        if self.attention_from_level == 0 || self.attention_from_level > ch.len() {
            return err(format!(
                "attention_from_level {} outside 1..={}",
                self.attention_from_level,
                ch.len()
            ));
        }
        if self.time_embed_dim < 4 || self.time_embed_dim % 2 != 0 {
            return err(format!("time_embed_dim {} must be even and >= 4", self.time_embed_dim));
        }
        let g = self.norm_groups;
        if g == 0 {
            return err("norm_groups must be positive".into());
        }
        let last = ch[ch.len() - 1];
        let mut normed: Vec<usize> = ch.clone();
        normed.push(2 * last);
        normed.extend(ch.windows(2).map(|w| w[0] + w[1]));
        if let Some(c) = normed.iter().find(|&&c| c % g != 0) {
            return err(format!("{c} channels not divisible into {g} norm groups"));
        }
        Ok(())
    }
}

impl Default for RestorerConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Optimization recipe: AdamW under a one-cycle learning-rate policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    pub adamw: AdamWConfig,
    /// Validation loss is evaluated every this many steps (and at the end).
    pub val_every: usize,
}

impl TrainConfig {
    /// Desk-scale recipe for the 64x64 phantom data on a CPU.
    pub fn desk() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 8,
            max_lr: 1e-3,
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
            adamw: AdamWConfig::default(),
            val_every: 250,
        }
    }

    /// The full-size recipe: 100k steps at a peak rate of 1e-4.
    pub fn full() -> Self {
        TrainConfig {
            steps: 100_000,
            batch_size: 16,
            max_lr: 1e-4,
            val_every: 5_000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return Err(Error::Config(format!("max_lr must be positive, got {}", self.max_lr)));
        }
        if !(0.0..1.0).contains(&self.pct_start) || self.div_factor <= 0.0 || self.final_div_factor <= 0.0 {
            return Err(Error::Config("invalid one-cycle parameters".into()));
        }
        if self.val_every == 0 {
            return Err(Error::Config("val_every must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        RestorerConfig::desk().validate().unwrap();
        RestorerConfig::full().validate().unwrap();
        TrainConfig::desk().validate().unwrap();
        TrainConfig::full().validate().unwrap();
    }

    #[test]
    fn rejects_bad_architectures() {
        let mut c = RestorerConfig::desk();
        c.input_size = 60;
        assert!(c.validate().is_err());
        let mut c = RestorerConfig::desk();
        c.channels_per_level = vec![16];
        assert!(c.validate().is_err());
        let mut c = RestorerConfig::desk();
        c.attention_from_level = 5;
        assert!(c.validate().is_err());
        let mut c = RestorerConfig::desk();
        c.channels_per_level = vec![12, 32, 48, 64];
        assert!(c.validate().is_err());
    }
}
