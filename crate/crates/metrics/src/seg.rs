use serde::{Deserialize, Serialize};

use crate::{MetricError, Result};

pub const DEFAULT_BETA_SQUARED: f64 = 0.3;

/// Binary H×W map, row-major (`y` selects the row, `x` the column).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegMap {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl SegMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(MetricError::ShapeMismatch {
                pred: data.len(),
                gt: height * width,
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

fn check_len(pred: usize, gt: usize) -> Result<()> {
    if pred != gt {
        return Err(MetricError::ShapeMismatch { pred, gt });
    }
    Ok(())
}

/// Mean absolute per-pixel difference. Works for any pair of same-length maps.
pub fn mae(pred: &[f32], gt: &[f32]) -> Result<f64> {
    check_len(pred.len(), gt.len())?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = pred.iter().zip(gt).map(|(&p, &g)| (p as f64 - g as f64).abs()).sum();
    Ok(s / pred.len() as f64)
}

/// F-measure after binarizing `pred` at `min(1, 2·mean(pred))`.
/// An all-zero prediction has no positives.
pub fn f_beta(pred: &[f32], gt: &SegMap, beta_squared: f64) -> Result<f64> {
    check_len(pred.len(), gt.data.len())?;
    let positives = gt.count_ones();
    if positives == 0 {
        return Err(MetricError::EmptyGroundTruth);
    }
    let mean = pred.iter().map(|&p| p as f64).sum::<f64>() / pred.len() as f64;
    let threshold = (2.0 * mean).min(1.0);
    let (mut tp, mut fp) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(&gt.data) {
        let p = p as f64;
        if p > 0.0 && p >= threshold {
            if g {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / positives as f64;
    Ok((1.0 + beta_squared) * precision * recall / (beta_squared * precision + recall))
}
