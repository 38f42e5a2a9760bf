use proactive_autograd::{Graph, Scalar, Tensor, Var};

use crate::targets::TargetTensors;
use crate::{DetectorError, Result, BOX_CHANNELS};

/// Box log-scales are clamped to ±this before exponentiation.
pub(crate) const LOG_SCALE_LIMIT: f64 = 8.0;

#[derive(Debug, Clone, Copy)]
pub struct DetectionLoss {
    pub total: Var,
    /// Σ over responsible cells of the L2 distance between normalized corners.
    pub boxes: Var,
    /// Σ over responsible cells of the class cross-entropy.
    pub classes: Var,
    /// Objectness cross-entropy, averaged over cells.
    pub objectness: Var,
}

fn coordinate_grid<T: Scalar>(grid: usize, by_column: bool) -> Result<Tensor<T>> {
    let data = (0..grid * grid)
        .map(|i| T::from_f64(if by_column { i % grid } else { i / grid } as f64))
        .collect();
    Ok(Tensor::new(&[1, 1, grid, grid], data)?)
}

/// Detection objective for a `[B, 5 + N, G, G]` head output. Every term is
/// averaged over the batch.
pub fn detection_loss<T: Scalar>(
    g: &mut Graph<T>,
    pred: Var,
    targets: &TargetTensors<T>,
) -> Result<DetectionLoss> {
    let shape = g.shape(pred).to_vec();
    let (batch, grid) = (shape[0], shape[2]);
    let classes = shape[1] - BOX_CHANNELS;
    let inv_batch = 1.0 / batch.max(1) as f64;
    let cell = 1.0 / grid as f64;

    let obj_t = g.constant(targets.objectness.clone());

    // Corners in units of the image size.
    let cols = g.constant(coordinate_grid(grid, true)?);
    let rows = g.constant(coordinate_grid(grid, false)?);
    let mut centers = Vec::with_capacity(2);
    for (ch, offsets) in [(1, cols), (2, rows)] {
        let t = g.narrow(pred, 1, ch, 1)?;
        let s = g.sigmoid(t);
        let c = g.add(s, offsets)?;
        centers.push(g.scale(c, cell));
    }
    let mut halves = Vec::with_capacity(2);
    for ch in [3, 4] {
        let t = g.narrow(pred, 1, ch, 1)?;
        let t = g.clamp(t, -LOG_SCALE_LIMIT, LOG_SCALE_LIMIT);
        let e = g.exp(t);
        halves.push(g.scale(e, cell / 2.0));
    }
    let x1 = g.sub(centers[0], halves[0])?;
    let y1 = g.sub(centers[1], halves[1])?;
    let x2 = g.add(centers[0], halves[0])?;
    let y2 = g.add(centers[1], halves[1])?;
    let corners = g.concat(&[x1, y1, x2, y2], 1)?;
    let gt_boxes = g.constant(targets.boxes.clone());
    let diff = g.sub(corners, gt_boxes)?;
    let diff = g.mul(diff, obj_t)?;
    let dist = g.l2_norm_axes(diff, &[1], false)?;
    let boxes = g.sum(dist)?;
    let boxes = g.scale(boxes, inv_batch);

    let logits = g.narrow(pred, 1, BOX_CHANNELS, classes)?;
    let logp = g.log_softmax(logits, 1)?;
    let onehot = g.constant(targets.classes.clone());
    let picked = g.dot(logp, onehot, &[], false)?;
    let class_loss = g.scale(picked, -inv_batch);

    let z = g.narrow(pred, 1, 0, 1)?;
    let neg_z = g.neg(z);
    let pos = g.softplus(neg_z);
    let neg = g.softplus(z);
    let pos = g.mul(pos, obj_t)?;
    let not_obj = g.neg(obj_t);
    let not_obj = g.add_scalar(not_obj, 1.0);
    let neg = g.mul(neg, not_obj)?;
    let bce = g.add(pos, neg)?;
    let objectness = g.mean(bce)?;

    for (name, v) in [("box", boxes), ("classification", class_loss), ("objectness", objectness)] {
        if !g.value(v).all_finite() {
            return Err(DetectorError::NonFinite(name));
        }
    }
    let total = g.add(boxes, class_loss)?;
    let total = g.add(total, objectness)?;
    Ok(DetectionLoss {
        total,
        boxes,
        classes: class_loss,
        objectness,
    })
}

/// Per image `‖pred − gt‖₂ / sqrt(H·W)`, averaged over the batch.
pub fn segmentation_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, gt: Var) -> Result<Var> {
    let shape = g.shape(pred).to_vec();
    let pixels: usize = shape[2..].iter().product();
    let d = g.sub(pred, gt)?;
    let n = g.l2_norm_axes(d, &[1, 2, 3], false)?;
    let n = g.scale(n, 1.0 / (pixels.max(1) as f64).sqrt());
    let loss = g.mean(n)?;
    if !g.value(loss).all_finite() {
        return Err(DetectorError::NonFinite("segmentation"));
    }
    Ok(loss)
}
