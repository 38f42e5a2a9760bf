use serde::{Deserialize, Serialize};

use crate::{Result, WrapperError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateMode {
    /// Encoder network, one template per image.
    ImageDependent,
    /// One learnable H×W map shared by every image.
    UniversalLearnable,
    /// A constant stored map; nothing learns.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformMode {
    Multiply,
    /// `clamp(image + (template − 1), 0, 1)`
    Add,
}

/// Stem layers and blocks of an encoder or decoder. The first `levels`
/// blocks each halve the resolution and the last `levels` blocks each double it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetShape {
    pub stem_layers: usize,
    pub stem_width: usize,
    pub blocks: usize,
    pub block_width: usize,
    pub levels: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        Self {
            stem_layers: 2,
            stem_width: 16,
            blocks: 13,
            block_width: 32,
            levels: 2,
        }
    }
}

impl NetShape {
    pub fn validate(&self, image_size: usize) -> Result<()> {
        let bad = |m: String| Err(WrapperError::InvalidConfig(m));
        if self.stem_layers == 0 || self.stem_width == 0 || self.block_width == 0 {
            return bad("layer counts and widths must be positive".into());
        }
        if self.blocks < 2 * self.levels + 1 {
            return bad(format!("{} blocks cannot hold {} resolution levels", self.blocks, self.levels));
        }
        if image_size % (1 << self.levels) != 0 {
            return bad(format!("image size {image_size} is not divisible by 2^{}", self.levels));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub obj: f64,
    pub enc: f64,
    pub dec: f64,
}

impl LossWeights {
    /// Generic object detection defaults.
    pub const GOD: Self = Self { obj: 7.0, enc: 10.0, dec: 10.0 };
    /// Camouflaged object detection defaults.
    pub const COD: Self = Self { obj: 10.0, enc: 0.1, dec: 0.1 };
    pub const PASSIVE: Self = Self { obj: 1.0, enc: 0.0, dec: 0.0 };

    pub fn validate(&self) -> Result<()> {
        let all = [self.obj, self.enc, self.dec];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || all.iter().all(|&w| w == 0.0) {
            return Err(WrapperError::InvalidConfig(
                "loss weights must be nonnegative with at least one positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WrapperConfig {
    pub encoder: NetShape,
    pub decoder: NetShape,
    pub template_mode: TemplateMode,
    pub transform_mode: TransformMode,
    pub use_decoder: bool,
    pub loss_weights: LossWeights,
    /// Bias of the sigmoid head at initialization; 4.0 gives templates ≈ 0.98.
    pub final_bias_offset: f64,
    /// Head weights start uniform in ±`head_init_scale`·sqrt(3/fan_in).
    pub head_init_scale: f64,
    /// Fixed mode draws its map uniformly from `[fixed_template_low, 1]`.
    pub fixed_template_low: f64,
}

impl Default for WrapperConfig {
    fn default() -> Self {
        Self {
            encoder: NetShape::default(),
            decoder: NetShape::default(),
            template_mode: TemplateMode::ImageDependent,
            transform_mode: TransformMode::Multiply,
            use_decoder: true,
            loss_weights: LossWeights::GOD,
            final_bias_offset: 4.0,
            head_init_scale: 0.01,
            fixed_template_low: 0.5,
        }
    }
}

impl WrapperConfig {
    pub fn validate(&self, image_size: usize) -> Result<()> {
        self.encoder.validate(image_size)?;
        self.decoder.validate(image_size)?;
        self.loss_weights.validate()?;
        if !self.final_bias_offset.is_finite() || !(self.head_init_scale >= 0.0) {
            return Err(WrapperError::InvalidConfig("head initialization must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.fixed_template_low) {
            return Err(WrapperError::InvalidConfig("fixed_template_low must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
