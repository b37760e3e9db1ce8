use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters. The `use_*` switches exist for ablations;
/// the full detector has all of them on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Side length `S` of the middle scale. Stems see `2S`, `S` and `S/2`.
    pub base_scale: usize,
    /// Feature width `W` after every stem.
    pub base_channels: usize,
    pub fpb_count: usize,
    pub wtconv_levels: usize,
    /// Feed the `2S` input through its stem and the first spatial block.
    pub use_large_scale: bool,
    /// Fuse the `S/2` stem after the second spatial block.
    pub use_small_scale: bool,
    /// Wavelet enhancement in every stem (DWT, band convolutions, FFN, IDWT).
    pub wavelet_branch: bool,
    /// Central-difference convolution in the stem; a plain 3×3 conv if off.
    pub central_conv: bool,
}

/// Input channels of a grayscale image.
pub const IN_CHANNELS: usize = 1;

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_scale: 224,
            base_channels: 32,
            fpb_count: 2,
            wtconv_levels: 1,
            use_large_scale: true,
            use_small_scale: true,
            wavelet_branch: true,
            central_conv: true,
        }
    }
}

impl ModelConfig {
    pub fn with_scale(base_scale: usize) -> Self {
        ModelConfig {
            base_scale,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.base_scale == 0 || self.base_scale % 16 != 0 {
            return fail(format!("base_scale {} must be a positive multiple of 16", self.base_scale));
        }
        if self.base_channels < 2 || self.base_channels % 2 != 0 {
            return fail(format!("base_channels {} must be even and at least 2", self.base_channels));
        }
        if self.fpb_count == 0 {
            return fail("fpb_count must be at least 1".into());
        }
        if self.wtconv_levels == 0 {
            return fail("wtconv_levels must be at least 1".into());
        }
        // the smallest stem input is S/2 and its low band is split `levels` more times
        let need = 1usize << (self.wtconv_levels + 1);
        if (self.base_scale / 2) % need != 0 {
            return fail(format!(
                "base_scale {} too small for {} wavelet level(s)",
                self.base_scale, self.wtconv_levels
            ));
        }
        Ok(())
    }

    /// Side lengths of the active stem inputs, largest first.
    pub fn input_sides(&self) -> Vec<usize> {
        let s = self.base_scale;
        let mut v = Vec::with_capacity(3);
        if self.use_large_scale {
            v.push(2 * s);
        }
        v.push(s);
        if self.use_small_scale {
            v.push(s / 2);
        }
        v
    }

    pub fn num_scales(&self) -> usize {
        self.input_sides().len()
    }

    /// Spatial side the frequency blocks run at.
    pub fn fpb_side(&self) -> usize {
        self.base_scale / 4
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig::with_scale(40).validate().is_err());
        let odd = ModelConfig {
            base_channels: 7,
            ..ModelConfig::with_scale(32)
        };
        assert!(odd.validate().is_err());
        let deep = ModelConfig {
            wtconv_levels: 4,
            ..ModelConfig::with_scale(32)
        };
        assert!(deep.validate().is_err());
    }

    #[test]
    fn scale_sides() {
        let c = ModelConfig::default();
        assert_eq!(c.input_sides(), vec![448, 224, 112]);
        assert_eq!(c.fpb_side(), 56);
        let single = ModelConfig {
            use_large_scale: false,
            use_small_scale: false,
            ..c
        };
        assert_eq!(single.input_sides(), vec![224]);
    }

    #[test]
    fn json_fills_defaults() {
        let c: ModelConfig = serde_json::from_str(r#"{"base_scale": 32}"#).unwrap();
        assert_eq!(c.base_channels, 32);
        assert!(serde_json::from_str::<ModelConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
