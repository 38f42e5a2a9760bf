use proactive_autograd::Tensor;
use proactive_metrics::{BBox, GroundTruth};

use crate::Result;

const FRAC_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellTarget {
    pub bbox: BBox,
    pub class_id: usize,
}

/// Responsible ground truth per cell (row-major, `row * G + col`).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTargets {
    pub grid: usize,
    pub image_size: usize,
    pub cells: Vec<Option<CellTarget>>,
    /// Two box centres fell in one cell; only the larger box was kept.
    pub collided: bool,
}

impl SceneTargets {
    pub fn stride(&self) -> f64 {
        self.image_size as f64 / self.grid as f64
    }

    pub fn responsible(&self) -> impl Iterator<Item = (usize, &CellTarget)> {
        self.cells.iter().enumerate().filter_map(|(i, c)| c.as_ref().map(|c| (i, c)))
    }
}

/// Column and row of the cell containing the centre of `b`.
pub fn center_cell(b: &BBox, stride: f64, grid: usize) -> (usize, usize) {
    let (cx, cy) = b.center();
    let clamp = |v: f64| ((v / stride).floor().max(0.0) as usize).min(grid - 1);
    (clamp(cx), clamp(cy))
}

pub fn assign_targets(ground_truths: &[GroundTruth], image_size: usize, grid: usize) -> SceneTargets {
    let stride = image_size as f64 / grid as f64;
    let mut cells: Vec<Option<CellTarget>> = vec![None; grid * grid];
    let mut collided = false;
    for gt in ground_truths {
        let (col, row) = center_cell(&gt.bbox, stride, grid);
        let slot = &mut cells[row * grid + col];
        let new = CellTarget {
            bbox: gt.bbox,
            class_id: gt.class_id,
        };
        match slot {
            None => *slot = Some(new),
            Some(old) => {
                collided = true;
                if new.bbox.area() > old.bbox.area() {
                    *slot = Some(new);
                }
            }
        }
    }
    SceneTargets {
        grid,
        image_size,
        cells,
        collided,
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(FRAC_EPS, 1.0 - FRAC_EPS);
    (p / (1.0 - p)).ln()
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `[tx, ty, tw, th]` for box `b` in cell `(col, row)`.
pub fn encode_box(b: &BBox, col: usize, row: usize, stride: f64) -> [f64; 4] {
    let (cx, cy) = b.center();
    [
        logit(cx / stride - col as f64),
        logit(cy / stride - row as f64),
        (b.width().max(f64::MIN_POSITIVE) / stride).ln(),
        (b.height().max(f64::MIN_POSITIVE) / stride).ln(),
    ]
}

pub fn decode_box(t: [f64; 4], col: usize, row: usize, stride: f64) -> BBox {
    let cx = (col as f64 + sigmoid(t[0])) * stride;
    let cy = (row as f64 + sigmoid(t[1])) * stride;
    BBox::from_center(cx, cy, stride * t[2].exp(), stride * t[3].exp())
}

/// Dense target tensors for a batch, all over `[B, ·, G, G]`.
#[derive(Debug, Clone)]
pub struct TargetTensors<T> {
    /// 1 at responsible cells.
    pub objectness: Tensor<T>,
    /// Corner coordinates divided by the image size, zero elsewhere.
    pub boxes: Tensor<T>,
    /// One-hot class at responsible cells.
    pub classes: Tensor<T>,
}

pub fn targets_tensors<T: proactive_autograd::Scalar>(
    targets: &[SceneTargets],
    num_classes: usize,
) -> Result<TargetTensors<T>> {
    let b = targets.len();
    let grid = targets.first().map_or(0, |t| t.grid);
    let cells = grid * grid;
    let mut obj = vec![T::zero(); b * cells];
    let mut boxes = vec![T::zero(); b * 4 * cells];
    let mut classes = vec![T::zero(); b * num_classes * cells];
    for (i, t) in targets.iter().enumerate() {
        let size = t.image_size as f64;
        for (cell, c) in t.responsible() {
            obj[i * cells + cell] = T::one();
            let coords = [c.bbox.x1, c.bbox.y1, c.bbox.x2, c.bbox.y2];
            for (k, v) in coords.iter().enumerate() {
                boxes[(i * 4 + k) * cells + cell] = T::from_f64(v / size);
            }
            if c.class_id < num_classes {
                classes[(i * num_classes + c.class_id) * cells + cell] = T::one();
            }
        }
    }
    Ok(TargetTensors {
        objectness: Tensor::new(&[b, 1, grid, grid], obj)?,
        boxes: Tensor::new(&[b, 4, grid, grid], boxes)?,
        classes: Tensor::new(&[b, num_classes, grid, grid], classes)?,
    })
}
