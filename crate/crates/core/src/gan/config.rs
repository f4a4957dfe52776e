use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and optimisation settings of the adversarial model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub image_size: usize,
    pub channels: usize,
    pub base_feature_maps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub flip_augmentation: bool,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            image_size: 32,
            channels: 1,
            base_feature_maps: 32,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 64,
            epochs: 25,
            seed: 0,
            flip_augmentation: true,
        }
    }
}

impl GanConfig {
    /// 64×64×3 images from a 100-d latent.
    pub fn full_scale() -> Self {
        Self {
            latent_dim: 100,
            image_size: 64,
            channels: 3,
            base_feature_maps: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![16, 32, 64].contains(&self.image_size) {
            return Err(Error::invalid(format!(
                "image_size must be 16, 32 or 64, got {}",
                self.image_size
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::invalid(format!(
                "channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        if self.latent_dim == 0 || self.base_feature_maps == 0 {
            return Err(Error::invalid("latent_dim and base_feature_maps must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be at least 2 for batch statistics"));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("lr must be positive and betas in [0, 1)"));
        }
        Ok(())
    }

    /// Number of stride-2 stages: `log2(image_size) − 2`.
    pub fn depth(&self) -> usize {
        self.image_size.trailing_zeros() as usize - 2
    }

    /// Channel count of the 4×4 map at the bottom of both networks.
    pub fn bottleneck_channels(&self) -> usize {
        self.base_feature_maps << (self.depth() - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_follows_image_size() {
        for (size, depth) in [(16, 2), (32, 3), (64, 4)] {
            let c = GanConfig {
                image_size: size,
                ..GanConfig::default()
            };
            c.validate().unwrap();
            assert_eq!(c.depth(), depth);
        }
        let bad = GanConfig {
            image_size: 48,
            ..GanConfig::default()
        };
        assert!(bad.validate().is_err());
        GanConfig::full_scale().validate().unwrap();
    }
}
