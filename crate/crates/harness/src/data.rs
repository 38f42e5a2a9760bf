use proactive_autograd::Tensor;
use proactive_detector::{assign_targets, targets_tensors, TargetTensors};
use proactive_metrics::GroundTruth;
use proactive_synth::{Dataset, Scene};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::DataConfig;
use crate::Result;

#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn generate_datasets(cfg: &DataConfig) -> Result<Datasets> {
    Ok(Datasets {
        train: Dataset::generate(&cfg.train_spec())?,
        test: Dataset::generate(&cfg.test_spec())?,
    })
}

/// SHA-256 over the serialized training and test sets.
pub fn dataset_hash(data: &Datasets) -> String {
    let mut h = Sha256::new();
    h.update(data.train.to_bytes());
    h.update(data.test.to_bytes());
    hex::encode(h.finalize())
}

pub fn ground_truths(scene: &Scene) -> Vec<GroundTruth> {
    scene
        .annotations
        .iter()
        .map(|a| GroundTruth {
            bbox: a.bbox,
            class_id: a.class_id,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, 3, H, W]`
    pub images: Tensor<f32>,
    /// `[B, 1, H, W]`
    pub maps: Tensor<f32>,
    pub targets: TargetTensors<f32>,
}

pub fn make_batch(scenes: &[Scene], indices: &[usize], num_classes: usize) -> Result<Batch> {
    let picked: Vec<&Scene> = indices.iter().map(|&i| &scenes[i]).collect();
    let images: Vec<_> = picked.iter().map(|s| &s.image).collect();
    let maps: Vec<_> = picked.iter().map(|s| &s.seg_map).collect();
    let size = picked.first().map_or(0, |s| s.image.height);
    let grid = size / 8;
    let targets: Vec<_> = picked
        .iter()
        .map(|s| assign_targets(&ground_truths(s), size, grid))
        .collect();
    Ok(Batch {
        images: proactive_wrapper::batch_images(&images)?,
        maps: proactive_wrapper::batch_maps(&maps)?,
        targets: targets_tensors(&targets, num_classes)?,
    })
}

/// Epoch-wise shuffled minibatch indices.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(len: usize, rng: ChaCha8Rng) -> Self {
        Self {
            order: (0..len).collect(),
            pos: len,
            rng,
        }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        if self.order.is_empty() {
            return out;
        }
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let take = (size - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}
