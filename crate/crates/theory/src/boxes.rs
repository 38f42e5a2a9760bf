use proactive_metrics::{
    average_precision, mean_ap, ApSummary, BBox, Detection, EvalImage, GroundTruth,
};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{RegressionConfig, TheoryError};
use crate::sgd::{run, stream_rng};

/// Linear box regression: box coordinate `c` of image vector `i` is
/// `base[c] + coordinate_scale · w_cᵀi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoxTaskSpec {
    pub image_size: f64,
    /// (x1, y1, x2, y2)
    pub base_box: [f64; 4],
    pub coordinate_scale: f64,
    pub test_boxes: usize,
    /// Overrides `max_steps`; may be zero.
    pub train_steps: Option<usize>,
}

impl Default for BoxTaskSpec {
    fn default() -> Self {
        Self {
            image_size: 64.0,
            base_box: [16.0, 16.0, 48.0, 48.0],
            coordinate_scale: 16.0,
            test_boxes: 500,
            train_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub ap_passive: ApSummary,
    pub ap_proactive: ApSummary,
    /// Predicted boxes with x₂ ≤ x₁ or y₂ ≤ y₁, scored as zero-area.
    pub degenerate_passive: usize,
    pub degenerate_proactive: usize,
    /// AP′ ≥ AP at IoU 0.5 and 0.75.
    pub proactive_not_worse: bool,
}

const TEST_STREAM: u64 = u64::MAX;

fn decode(base: &[f64; 4], scale: f64, weights: &[Vec<f64>], i: &[f64], size: f64) -> (BBox, bool) {
    let c: Vec<f64> = (0..4)
        .map(|k| base[k] + scale * weights[k].iter().zip(i).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let raw = BBox { x1: c[0], y1: c[1], x2: c[2], y2: c[3] };
    let degenerate = !(raw.x2 > raw.x1 && raw.y2 > raw.y1);
    (raw.clamp_to(size, size), degenerate)
}

/// Trains one regressor per box coordinate in each arm (coordinate `k` uses
/// trial stream `k`), then scores predictions on a shared test set. The
/// proactive detector sees the template-scaled input `s·i`, so its output
/// uses the effective weights `s·w′`.
pub fn theorem1_check(config: &RegressionConfig, task: &BoxTaskSpec) -> Result<Theorem1Report, TheoryError> {
    config.validate()?;
    let steps = task.train_steps.unwrap_or(config.max_steps);
    let s = config.template_scalar;
    let w_star: Vec<Vec<f64>> = (0..4u64)
        .map(|k| {
            let mut rng = stream_rng(config.seed, 1 << 32 | k);
            (0..config.dim)
                .map(|_| config.optimum_scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect()
        })
        .collect();
    let train = |proactive: bool| -> Vec<Vec<f64>> {
        (0..4)
            .map(|k| {
                let w = run(config, &w_star[k], k as u64, proactive, steps).final_weight;
                if proactive {
                    w.iter().map(|v| s * v).collect()
                } else {
                    w
                }
            })
            .collect()
    };
    let passive = train(false);
    let proactive = train(true);

    let mut rng = stream_rng(config.seed, TEST_STREAM);
    let mut gts = Vec::with_capacity(task.test_boxes);
    let mut inputs = Vec::with_capacity(task.test_boxes);
    while gts.len() < task.test_boxes {
        let i: Vec<f64> = (0..config.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (gt, degenerate) = decode(&task.base_box, task.coordinate_scale, &w_star, &i, task.image_size);
        // resample until the ground truth is a valid box
        if degenerate || !gt.is_valid() {
            continue;
        }
        gts.push(gt);
        inputs.push(i);
    }

    let evaluate = |weights: &[Vec<f64>]| -> Result<(ApSummary, usize, [f64; 2]), TheoryError> {
        let mut degenerate = 0;
        let images: Vec<EvalImage> = inputs
            .iter()
            .zip(&gts)
            .map(|(i, gt)| {
                let (pred, bad) = decode(&task.base_box, task.coordinate_scale, weights, i, task.image_size);
                degenerate += bad as usize;
                EvalImage {
                    detections: vec![Detection { bbox: pred, class_id: 0, score: 1.0 }],
                    ground_truths: vec![GroundTruth { bbox: *gt, class_id: 0 }],
                }
            })
            .collect();
        let summary = mean_ap(&images)?;
        let at = [average_precision(&images, 0.5)?, average_precision(&images, 0.75)?];
        Ok((summary, degenerate, at))
    };
    let (ap_passive, degenerate_passive, at_p) = evaluate(&passive)?;
    let (ap_proactive, degenerate_proactive, at_q) = evaluate(&proactive)?;
    Ok(Theorem1Report {
        ap_passive,
        ap_proactive,
        degenerate_passive,
        degenerate_proactive,
        proactive_not_worse: at_q[0] >= at_p[0] && at_q[1] >= at_p[1],
    })
}
