//! Box geometry, average precision and segmentation-map metrics.

mod ap;
mod geometry;
pub mod oracle;
mod seg;

pub use ap::{
    average_precision, class_average_precision, mean_ap, pr_curve, ApSummary, Detection,
    EvalImage, GroundTruth, PrPoint, IOU_THRESHOLDS,
};
pub use geometry::{iou, BBox};
pub use seg::{f_beta, mae, SegMap, DEFAULT_BETA_SQUARED};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("shape mismatch: prediction has {pred} values, ground truth has {gt}")]
    ShapeMismatch { pred: usize, gt: usize },
    #[error("ground-truth map has no positive pixel; recall is undefined")]
    EmptyGroundTruth,
    #[error("invalid box ({x1}, {y1}, {x2}, {y2})")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("no class has either detections or ground truths")]
    NothingToEvaluate,
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;
