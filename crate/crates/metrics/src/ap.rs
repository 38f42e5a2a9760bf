use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BBox};
use crate::{MetricError, Result};

/// 0.50:0.05:0.95.
pub const IOU_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub class_id: usize,
}

/// Detections and ground truths of one image. Matching never crosses images.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalImage {
    pub detections: Vec<Detection>,
    pub ground_truths: Vec<GroundTruth>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub score_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    /// Mean over [`IOU_THRESHOLDS`].
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

/// Precision/recall after each detection of `class_id`, in descending score
/// order (stable for ties), plus the number of ground truths of that class.
pub fn pr_curve(images: &[EvalImage], class_id: usize, iou_threshold: f64) -> Result<(Vec<PrPoint>, usize)> {
    let mut order = Vec::new();
    let mut num_gt = 0;
    for (i, img) in images.iter().enumerate() {
        for (j, d) in img.detections.iter().enumerate() {
            if !d.score.is_finite() {
                return Err(MetricError::NonFiniteScore(d.score));
            }
            if d.class_id == class_id {
                order.push((i, j));
            }
        }
        num_gt += img.ground_truths.iter().filter(|g| g.class_id == class_id).count();
    }
    order.sort_by(|a, b| {
        let sa = images[a.0].detections[a.1].score;
        let sb = images[b.0].detections[b.1].score;
        sb.total_cmp(&sa)
    });

    let mut matched: Vec<Vec<bool>> = images.iter().map(|img| vec![false; img.ground_truths.len()]).collect();
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(order.len());
    for (k, &(i, j)) in order.iter().enumerate() {
        let det = &images[i].detections[j];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in images[i].ground_truths.iter().enumerate() {
            if gt.class_id != class_id || matched[i][g] {
                continue;
            }
            let o = iou(&det.bbox, &gt.bbox);
            if o >= iou_threshold && best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        if let Some((g, _)) = best {
            matched[i][g] = true;
            tp += 1;
        }
        curve.push(PrPoint {
            recall: if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 },
            precision: tp as f64 / (k + 1) as f64,
            score_threshold: det.score,
        });
    }
    Ok((curve, num_gt))
}

/// AP of a single class, or `None` when the class has neither detections nor
/// ground truths.
pub fn class_average_precision(images: &[EvalImage], class_id: usize, iou_threshold: f64) -> Result<Option<f64>> {
    let (curve, num_gt) = pr_curve(images, class_id, iou_threshold)?;
    if num_gt == 0 {
        return Ok(if curve.is_empty() { None } else { Some(0.0) });
    }
    // All-point interpolation under the monotone precision envelope. Recall
    // only moves at true positives, each time by exactly 1/num_gt.
    let mut envelope = 0.0f64;
    let mut total = 0.0;
    for k in (0..curve.len()).rev() {
        envelope = envelope.max(curve[k].precision);
        let prev = if k == 0 { 0.0 } else { curve[k - 1].recall };
        if curve[k].recall > prev {
            total += envelope;
        }
    }
    let ap = total / num_gt as f64;
    Ok(Some(ap))
}

/// Class-averaged AP at one IoU threshold.
pub fn average_precision(images: &[EvalImage], iou_threshold: f64) -> Result<f64> {
    let classes: BTreeSet<usize> = images
        .iter()
        .flat_map(|img| {
            img.detections
                .iter()
                .map(|d| d.class_id)
                .chain(img.ground_truths.iter().map(|g| g.class_id))
        })
        .collect();
    let mut sum = 0.0;
    let mut n = 0usize;
    for c in classes {
        if let Some(ap) = class_average_precision(images, c, iou_threshold)? {
            sum += ap;
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricError::NothingToEvaluate);
    }
    Ok(sum / n as f64)
}

pub fn mean_ap(images: &[EvalImage]) -> Result<ApSummary> {
    let per: Vec<f64> = IOU_THRESHOLDS
        .iter()
        .map(|&t| average_precision(images, t))
        .collect::<Result<_>>()?;
    Ok(ApSummary {
        ap: per.iter().sum::<f64>() / per.len() as f64,
        ap50: per[0],
        ap75: per[5],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn image(dets: &[(BBox, f64)], gts: &[BBox]) -> EvalImage {
        EvalImage {
            detections: dets.iter().map(|&(bbox, score)| Detection { bbox, class_id: 0, score }).collect(),
            ground_truths: gts.iter().map(|&bbox| GroundTruth { bbox, class_id: 0 }).collect(),
        }
    }

    #[test]
    fn single_perfect_match() {
        let b = bx(0.0, 0.0, 4.0, 4.0);
        assert_eq!(average_precision(&[image(&[(b, 0.9)], &[b])], 0.5).unwrap(), 1.0);
    }

    #[test]
    fn missing_detection() {
        let b = bx(0.0, 0.0, 4.0, 4.0);
        assert_eq!(average_precision(&[image(&[], &[b])], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn trailing_false_positive_does_not_hurt() {
        let b = bx(0.0, 0.0, 4.0, 4.0);
        let fp = bx(10.0, 10.0, 12.0, 12.0);
        assert_eq!(average_precision(&[image(&[(b, 0.9), (fp, 0.8)], &[b])], 0.5).unwrap(), 1.0);
    }

    #[test]
    fn classes_without_ground_truth() {
        let b = bx(0.0, 0.0, 4.0, 4.0);
        let mut img = image(&[(b, 0.9)], &[b]);
        img.detections.push(Detection { bbox: b, class_id: 1, score: 0.5 });
        // class 0 scores 1, class 1 has a detection but no ground truth
        assert_eq!(average_precision(&[img], 0.5).unwrap(), 0.5);
        assert_eq!(average_precision(&[EvalImage::default()], 0.5), Err(MetricError::NothingToEvaluate));
    }

    #[test]
    fn iou_just_under_sixty_percent() {
        // 10x10 gt, 10x5.8 detection inside it: IoU 0.58 clears 0.50 and 0.55 only
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        let det = bx(0.0, 0.0, 10.0, 5.8);
        let s = mean_ap(&[image(&[(det, 0.9)], &[gt])]).unwrap();
        assert_eq!(s.ap50, 1.0);
        assert_eq!(s.ap75, 0.0);
        assert!((s.ap - 0.2).abs() < 1e-12);
    }

    #[test]
    fn threshold_is_inclusive() {
        // IoU exactly 0.6 matches at 0.60 as well
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        let det = bx(0.0, 0.0, 10.0, 6.0);
        let s = mean_ap(&[image(&[(det, 0.9)], &[gt])]).unwrap();
        assert!((s.ap - 0.3).abs() < 1e-12);
    }

    #[test]
    fn all_false_positives() {
        let gt = bx(0.0, 0.0, 4.0, 4.0);
        let fp = bx(10.0, 10.0, 12.0, 12.0);
        let s = mean_ap(&[image(&[(fp, 0.9), (fp, 0.3)], &[gt])]).unwrap();
        assert_eq!((s.ap, s.ap50, s.ap75), (0.0, 0.0, 0.0));
    }
}
