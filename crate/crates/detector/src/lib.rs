//! Single-scale grid detector with a box/class head and a segmentation head.

mod config;
mod decode;
mod loss;
mod model;
mod targets;

pub use config::{DetectorConfig, HeadMode};
pub use decode::{decode_predictions, non_max_suppression};
pub use loss::{detection_loss, segmentation_loss, DetectionLoss};
pub use model::{Detector, DetectorOutput};
pub use targets::{assign_targets, decode_box, encode_box, targets_tensors, CellTarget, SceneTargets, TargetTensors};

use proactive_autograd::{CheckpointError, TensorError};

/// Channel layout of the grid head: objectness, four box offsets, then class logits.
pub const BOX_CHANNELS: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum DetectorError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
    #[error("input shape {found:?} does not match the configured [_, 3, {size}, {size}]")]
    InputShape { found: Vec<usize>, size: usize },
    #[error("{0} loss is not finite")]
    NonFinite(&'static str),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

pub type Result<T, E = DetectorError> = std::result::Result<T, E>;
