//! Independent reference implementations used to test the fast metrics.

use crate::{iou, BBox, EvalImage};

/// Area of the union by coordinate compression: split the plane at every box
/// edge and count the elementary cells each box covers.
pub fn intersection_and_union(a: &BBox, b: &BBox) -> (f64, f64) {
    let mut xs = vec![a.x1, a.x2, b.x1, b.x2];
    let mut ys = vec![a.y1, a.y2, b.y1, b.y2];
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let inside = |bx: &BBox, x: f64, y: f64| x > bx.x1 && x < bx.x2 && y > bx.y1 && y < bx.y2;
    let (mut inter, mut union) = (0.0, 0.0);
    for i in 0..3 {
        for j in 0..3 {
            let (w, h) = (xs[i + 1] - xs[i], ys[j + 1] - ys[j]);
            if w <= 0.0 || h <= 0.0 {
                continue;
            }
            let (cx, cy) = ((xs[i] + xs[i + 1]) / 2.0, (ys[j] + ys[j + 1]) / 2.0);
            let (ia, ib) = (inside(a, cx, cy), inside(b, cx, cy));
            if ia && ib {
                inter += w * h;
            }
            if ia || ib {
                union += w * h;
            }
        }
    }
    (inter, union)
}

/// IoU from [`intersection_and_union`].
pub fn iou_by_area(a: &BBox, b: &BBox) -> f64 {
    let (inter, union) = intersection_and_union(a, b);
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Brute-force AP: greedy matching re-implemented over a flat list, then the
/// interpolated precision integrated over each recall interval.
pub fn brute_force_ap(images: &[EvalImage], thr: f64) -> Option<f64> {
    let mut classes: Vec<usize> = images
        .iter()
        .flat_map(|im| im.detections.iter().map(|d| d.class_id).chain(im.ground_truths.iter().map(|g| g.class_id)))
        .collect();
    classes.sort();
    classes.dedup();
    let mut aps = Vec::new();
    for c in classes {
        let mut dets: Vec<(f64, usize, usize, BBox)> = Vec::new();
        let mut seq = 0;
        for (i, im) in images.iter().enumerate() {
            for d in &im.detections {
                if d.class_id == c {
                    dets.push((d.score, seq, i, d.bbox));
                }
                seq += 1;
            }
        }
        // descending score, then original order
        dets.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let gts: Vec<(usize, BBox)> = images
            .iter()
            .enumerate()
            .flat_map(|(i, im)| im.ground_truths.iter().filter(|g| g.class_id == c).map(move |g| (i, g.bbox)))
            .collect();
        if gts.is_empty() {
            if !dets.is_empty() {
                aps.push(0.0);
            }
            continue;
        }
        let mut used = vec![false; gts.len()];
        let mut points = Vec::new();
        let mut tp = 0;
        for (k, (_, _, img, b)) in dets.iter().enumerate() {
            let mut best = None;
            let mut best_iou = -1.0;
            for (g, (gi, gb)) in gts.iter().enumerate() {
                let o = iou(b, gb);
                if *gi == *img && !used[g] && o >= thr && o > best_iou {
                    best = Some(g);
                    best_iou = o;
                }
            }
            if let Some(g) = best {
                used[g] = true;
                tp += 1;
            }
            points.push((tp as f64 / gts.len() as f64, tp as f64 / (k + 1) as f64));
        }
        let mut levels: Vec<f64> = points.iter().map(|p| p.0).collect();
        levels.push(0.0);
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let mut ap = 0.0;
        for w in levels.windows(2) {
            let interp = points.iter().filter(|p| p.0 >= w[1]).map(|p| p.1).fold(0.0, f64::max);
            ap += (w[1] - w[0]) * interp;
        }
        aps.push(ap);
    }
    if aps.is_empty() {
        None
    } else {
        Some(aps.iter().sum::<f64>() / aps.len() as f64)
    }
}
