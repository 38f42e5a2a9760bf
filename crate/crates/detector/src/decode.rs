use proactive_autograd::Tensor;
use proactive_metrics::{iou, Detection};

use crate::loss::LOG_SCALE_LIMIT;
use crate::targets::decode_box;
use crate::BOX_CHANNELS;

/// Greedy suppression of detections overlapping a higher-scoring survivor by
/// more than `nms_iou`. Equal scores keep input order. Output is sorted by
/// descending score.
pub fn non_max_suppression(dets: &[Detection], nms_iou: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = dets[i];
        if kept.iter().all(|k| iou(&k.bbox, &d.bbox) <= nms_iou) {
            kept.push(d);
        }
    }
    kept
}

/// Detections per image from a `[B, 5 + N, G, G]` head output.
pub fn decode_predictions(
    pred: &Tensor<f32>,
    image_size: usize,
    score_threshold: f64,
    nms_iou: f64,
) -> Vec<Vec<Detection>> {
    let shape = pred.shape();
    let (batch, channels, grid) = (shape[0], shape[1], shape[2]);
    let classes = channels - BOX_CHANNELS;
    let cells = grid * grid;
    let stride = image_size as f64 / grid as f64;
    let size = image_size as f64;
    let data = pred.data();
    (0..batch)
        .map(|b| {
            let at = |ch: usize, cell: usize| data[(b * channels + ch) * cells + cell] as f64;
            let mut dets = Vec::new();
            for cell in 0..cells {
                let obj = 1.0 / (1.0 + (-at(0, cell)).exp());
                let logits: Vec<f64> = (0..classes).map(|k| at(BOX_CHANNELS + k, cell)).collect();
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = logits.iter().map(|l| (l - max).exp()).sum();
                let mut best = 0;
                for (k, l) in logits.iter().enumerate() {
                    if *l > logits[best] {
                        best = k;
                    }
                }
                let score = obj * (logits[best] - max).exp() / denom;
                if !(score > score_threshold) {
                    continue;
                }
                let limit = |v: f64| v.clamp(-LOG_SCALE_LIMIT, LOG_SCALE_LIMIT);
                let t = [at(1, cell), at(2, cell), limit(at(3, cell)), limit(at(4, cell))];
                let bbox = decode_box(t, cell % grid, cell / grid, stride).clamp_to(size, size);
                dets.push(Detection {
                    bbox,
                    class_id: best,
                    score: score.min(1.0),
                });
            }
            non_max_suppression(&dets, nms_iou)
        })
        .collect()
}
