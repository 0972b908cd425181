use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ops::{DEFAULT_LEAKY_SLOPE, DEFAULT_NORM_EPS};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of resolution levels `N`, including the bottleneck.
    pub num_levels: usize,
    pub base_channels: usize,
    /// Upper bound on channels at any level.
    pub channel_cap: usize,
    pub in_channels: usize,
    pub num_classes: usize,
    /// With the mask-enhanced modules off the network is the plain deeply
    /// supervised backbone ("MusNet").
    pub mem_enabled: bool,
    pub lrelu_slope: f64,
    pub norm_eps: f64,
    /// `(D, H, W)`.
    pub patch_size: [usize; 3],
}

impl ModelConfig {
    /// Defaults sized for a laptop CPU.
    pub fn desk() -> Self {
        ModelConfig {
            num_levels: 4,
            base_channels: 8,
            channel_cap: 80,
            in_channels: 1,
            num_classes: 2,
            mem_enabled: true,
            lrelu_slope: DEFAULT_LEAKY_SLOPE,
            norm_eps: DEFAULT_NORM_EPS,
            patch_size: [16, 48, 64],
        }
    }

    /// Full-size settings of the published network.
    pub fn paper() -> Self {
        ModelConfig {
            num_levels: 6,
            base_channels: 32,
            channel_cap: 320,
            patch_size: [32, 192, 256],
            ..Self::desk()
        }
    }

    /// Smallest configuration used for finite-difference checks.
    pub fn tiny() -> Self {
        ModelConfig {
            num_levels: 3,
            base_channels: 2,
            channel_cap: 20,
            patch_size: [8, 16, 16],
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_levels < 2 {
            return Err(Error::Config("num_levels must be >= 2".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if self.base_channels == 0 || self.in_channels == 0 {
            return Err(Error::Config("channel counts must be >= 1".into()));
        }
        if self.channel_cap < self.base_channels {
            return Err(Error::Config("channel_cap must be >= base_channels".into()));
        }
        if !(self.lrelu_slope >= 0.0 && self.lrelu_slope < 1.0) || !(self.norm_eps > 0.0) {
            return Err(Error::Config("bad slope or norm eps".into()));
        }
        let factor = 1usize << (self.num_levels - 1);
        if self.patch_size.iter().any(|&d| d == 0 || d % factor != 0) {
            return Err(Error::Config(format!(
                "patch {:?} not divisible by 2^(N-1) = {factor}",
                self.patch_size
            )));
        }
        Ok(())
    }

    /// Channels double per level up to the cap.
    pub fn channels(&self) -> Vec<usize> {
        (0..self.num_levels)
            .map(|n| (self.base_channels << n).min(self.channel_cap))
            .collect()
    }

    /// Spatial size at level `n`.
    pub fn level_size(&self, n: usize) -> [usize; 3] {
        self.patch_size.map(|d| d >> n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_progression() {
        let c = ModelConfig {
            num_levels: 3,
            base_channels: 4,
            channel_cap: 8,
            ..ModelConfig::tiny()
        };
        assert_eq!(c.channels(), vec![4, 8, 8]);
        assert_eq!(ModelConfig::desk().channels(), vec![8, 16, 32, 64]);
        assert_eq!(ModelConfig::paper().channels(), vec![32, 64, 128, 256, 320, 320]);
    }

    #[test]
    fn presets_are_valid() {
        for c in [ModelConfig::desk(), ModelConfig::paper(), ModelConfig::tiny()] {
            c.validate().unwrap();
        }
    }

    #[test]
    fn indivisible_patch_rejected() {
        let c = ModelConfig {
            patch_size: [8, 16, 12],
            num_levels: 4,
            ..ModelConfig::tiny()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            num_classes: 1,
            ..ModelConfig::tiny()
        };
        assert!(c.validate().is_err());
    }
}
