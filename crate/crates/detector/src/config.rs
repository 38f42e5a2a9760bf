use serde::{Deserialize, Serialize};

use crate::{DetectorError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// Boxes and classes.
    God,
    /// Segmentation map.
    Cod,
    Both,
}

impl HeadMode {
    pub fn has_grid(self) -> bool {
        matches!(self, Self::God | Self::Both)
    }

    pub fn has_seg(self) -> bool {
        matches!(self, Self::Cod | Self::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub num_classes: usize,
    /// Channels of the four trunk blocks; the first three are followed by 2×2 pooling.
    pub widths: [usize; 4],
    pub head: HeadMode,
    /// Initial objectness bias.
    pub objectness_prior: f64,
    pub score_threshold: f64,
    pub nms_iou: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            widths: [16, 32, 32, 64],
            head: HeadMode::God,
            objectness_prior: -2.0,
            score_threshold: 0.01,
            nms_iou: 0.5,
        }
    }
}

/// Total downsampling of the trunk.
pub const STRIDE: usize = 8;

impl DetectorConfig {
    pub fn validate(&self, image_size: usize) -> Result<()> {
        let bad = |m: String| Err(DetectorError::InvalidConfig(m));
        if self.num_classes == 0 {
            return bad("at least one class is required".into());
        }
        if self.widths.contains(&0) {
            return bad("trunk widths must be positive".into());
        }
        if image_size == 0 || image_size % STRIDE != 0 {
            return bad(format!("image size {image_size} is not a positive multiple of {STRIDE}"));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) || !(0.0..=1.0).contains(&self.nms_iou) {
            return bad("score_threshold and nms_iou must lie in [0, 1]".into());
        }
        if !self.objectness_prior.is_finite() {
            return bad("objectness_prior must be finite".into());
        }
        Ok(())
    }

    pub fn grid_size(image_size: usize) -> usize {
        image_size / STRIDE
    }
}
