use proactive_metrics::{iou, BBox, SegMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHANNELS: usize = 3;
pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;
/// Intensity offset that separates a fully camouflaged object from its background.
const CAMOUFLAGE_OFFSET: f32 = 0.02;
const MAX_OVERLAP: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("scene {index}: could not place object {object} without overlap after {attempts} attempts")]
    PlacementExhausted { index: u64, object: usize, attempts: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub image_size: usize,
    pub channels: usize,
    pub num_classes: usize,
    /// Inclusive range of objects per scene.
    pub objects_per_image: (usize, usize),
    /// 0 = generic, 1 = objects match the background up to a faint offset.
    pub camouflage_level: f64,
    pub background_noise_sigma: f64,
    pub count: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            image_size: 64,
            channels: CHANNELS,
            num_classes: 3,
            objects_per_image: (1, 3),
            camouflage_level: 0.0,
            background_noise_sigma: 0.03,
            count: 100,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.image_size < 8 {
            return bad("image_size must be at least 8");
        }
        if self.channels != CHANNELS {
            return bad("channels must be 3");
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive");
        }
        let (lo, hi) = self.objects_per_image;
        if lo > hi {
            return bad("objects_per_image range is empty");
        }
        if !(0.0..=1.0).contains(&self.camouflage_level) {
            return bad("camouflage_level must lie in [0, 1]");
        }
        if !(self.background_noise_sigma >= 0.0 && self.background_noise_sigma.is_finite()) {
            return bad("background_noise_sigma must be a nonnegative number");
        }
        if self.count == 0 {
            return bad("count must be positive");
        }
        Ok(())
    }
}

/// RGB image stored channel-planar: `data[(c * height + y) * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn filled(height: usize, width: usize, v: f32) -> Self {
        Self {
            height,
            width,
            data: vec![v; CHANNELS * height * width],
        }
    }

    pub fn at(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub bbox: BBox,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: Image,
    pub annotations: Vec<Annotation>,
    pub seg_map: SegMap,
}

/// Marks pixel `(m, n)` (m = column/x, n = row/y) when `x1 ≤ m ≤ x2` and
/// `y1 ≤ n ≤ y2` for some box; both bounds inclusive.
pub fn pseudo_seg_from_boxes(boxes: &[BBox], height: usize, width: usize) -> SegMap {
    let mut map = SegMap::zeros(height, width);
    for b in boxes {
        let Some((xs, xe)) = pixel_span(b.x1, b.x2, width) else { continue };
        let Some((ys, ye)) = pixel_span(b.y1, b.y2, height) else { continue };
        for y in ys..=ye {
            for x in xs..=xe {
                map.set(x, y, true);
            }
        }
    }
    map
}

/// Integer pixel indices `i` with `lo ≤ i ≤ hi`, clipped to `[0, len)`.
fn pixel_span(lo: f64, hi: f64, len: usize) -> Option<(usize, usize)> {
    let start = lo.ceil().max(0.0);
    let end = hi.floor().min(len as f64 - 1.0);
    if len == 0 || start > end {
        return None;
    }
    Some((start as usize, end as usize))
}

/// Saturated color for `class_id`, hues evenly spaced around the wheel.
pub fn class_color(class_id: usize, num_classes: usize) -> [f32; 3] {
    let h = class_id as f32 / num_classes as f32 * 6.0;
    let (s, v) = (0.85f32, 0.9f32);
    let f = h - h.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match h.floor() as usize % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn scene_rng(spec: &DatasetSpec, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    rng
}

fn background(spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> Image {
    let n = spec.image_size;
    let mut img = Image::filled(n, n, 0.0);
    let noise = Normal::new(0.0, spec.background_noise_sigma).expect("validated sigma");
    for c in 0..CHANNELS {
        let base: f32 = rng.random_range(0.35..0.65);
        // two low-frequency waves per channel give a smooth texture
        let waves: Vec<(f32, f32, f32)> = (0..2)
            .map(|_| {
                (
                    rng.random_range(0.5..3.0f32),
                    rng.random_range(0.5..3.0f32),
                    rng.random_range(0.0..std::f32::consts::TAU),
                )
            })
            .collect();
        for y in 0..n {
            for x in 0..n {
                let mut v = base;
                for &(fx, fy, phase) in &waves {
                    let arg = std::f32::consts::TAU * (fx * x as f32 + fy * y as f32) / n as f32 + phase;
                    v += 0.06 * arg.sin();
                }
                v += noise.sample(rng) as f32;
                img.set(c, x, y, v.clamp(0.0, 1.0));
            }
        }
    }
    img
}

fn sample_box(size: usize, rng: &mut ChaCha8Rng) -> BBox {
    let min_side = (size / 8).max(2);
    let max_side = (size / 3).max(min_side + 1);
    let w = rng.random_range(min_side..=max_side);
    let h = rng.random_range(min_side..=max_side);
    let x1 = rng.random_range(0..size - w);
    let y1 = rng.random_range(0..size - h);
    // inclusive pixel extent [x1, x1 + w - 1]
    BBox {
        x1: x1 as f64,
        y1: y1 as f64,
        x2: (x1 + w - 1) as f64,
        y2: (y1 + h - 1) as f64,
    }
}

/// Deterministic in `(spec.seed, index)`.
pub fn generate_scene(spec: &DatasetSpec, index: u64) -> Result<Scene, SynthError> {
    spec.validate()?;
    let mut rng = scene_rng(spec, index);
    let mut image = background(spec, &mut rng);
    let (lo, hi) = spec.objects_per_image;
    let count = rng.random_range(lo..=hi);
    let mut annotations: Vec<Annotation> = Vec::with_capacity(count);
    for object in 0..count {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let b = sample_box(spec.image_size, &mut rng);
            if annotations.iter().all(|a| iou(&a.bbox, &b) < MAX_OVERLAP) {
                placed = Some(b);
                break;
            }
        }
        let Some(bbox) = placed else {
            return Err(SynthError::PlacementExhausted {
                index,
                object,
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        };
        let class_id = rng.random_range(0..spec.num_classes);
        annotations.push(Annotation { bbox, class_id });
    }

    let chi = spec.camouflage_level as f32;
    let n = spec.image_size;
    for a in &annotations {
        let color = class_color(a.class_id, spec.num_classes);
        let sil = pseudo_seg_from_boxes(&[a.bbox], n, n);
        for y in 0..n {
            for x in 0..n {
                if !sil.get(x, y) {
                    continue;
                }
                for (c, &col) in color.iter().enumerate() {
                    let bg = image.at(c, x, y);
                    let v = (1.0 - chi) * col + chi * (bg + CAMOUFLAGE_OFFSET);
                    image.set(c, x, y, v.clamp(0.0, 1.0));
                }
            }
        }
    }
    let boxes: Vec<BBox> = annotations.iter().map(|a| a.bbox).collect();
    let seg_map = pseudo_seg_from_boxes(&boxes, n, n);
    Ok(Scene {
        image,
        annotations,
        seg_map,
    })
}
