use proactive_autograd::{Graph, Mode};
use proactive_detector::{decode_predictions, Detector};
use proactive_metrics::{f_beta, mae, mean_ap, Detection, EvalImage, DEFAULT_BETA_SQUARED};
use proactive_synth::Scene;
use proactive_wrapper::{batch_images, cosine_loss, Wrapper};
use serde::{Deserialize, Serialize};

use crate::data::ground_truths;
use crate::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub images: usize,
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub mae: Option<f64>,
    pub f_beta: Option<f64>,
}

/// One line of a prediction dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePrediction {
    pub scene: usize,
    pub detections: Vec<Detection>,
    pub mae: Option<f64>,
    pub f_beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: EvalMetrics,
    pub predictions: Vec<ScenePrediction>,
}

/// Encoder (if any) and detector in inference mode over `scenes`. The
/// decoder is never run; any decoder parameter read is an error.
pub fn evaluate(
    det: &mut Detector,
    mut wrapper: Option<&mut Wrapper>,
    scenes: &[Scene],
    batch_size: usize,
) -> Result<Evaluation> {
    let reads_before = wrapper.as_ref().map_or(0, |w| w.decoder_store.reads());
    let size = det.image_size;
    let mut predictions = Vec::with_capacity(scenes.len());
    let mut eval_images = Vec::with_capacity(scenes.len());
    for (c, chunk) in scenes.chunks(batch_size.max(1)).enumerate() {
        let images: Vec<_> = chunk.iter().map(|s| &s.image).collect();
        let mut g = Graph::new();
        let x = g.constant(batch_images(&images)?);
        let input = match wrapper.as_deref_mut() {
            Some(w) => {
                let s = w.template(&mut g, x, Mode::Eval)?;
                w.encrypt(&mut g, x, s)?
            }
            None => x,
        };
        let out = det.forward(&mut g, input, Mode::Eval)?;
        let dets = out.grid.map(|v| {
            decode_predictions(g.value(v), size, det.config.score_threshold, det.config.nms_iou)
        });
        for (i, scene) in chunk.iter().enumerate() {
            let detections = dets.as_ref().map_or_else(Vec::new, |d| d[i].clone());
            let (m, f) = match out.seg {
                Some(v) => {
                    let per = size * size;
                    let pred = &g.value(v).data()[i * per..(i + 1) * per];
                    (
                        Some(mae(pred, &scene.seg_map.to_f32())?),
                        Some(f_beta(pred, &scene.seg_map, DEFAULT_BETA_SQUARED)?),
                    )
                }
                None => (None, None),
            };
            eval_images.push(EvalImage {
                detections: detections.clone(),
                ground_truths: ground_truths(scene),
            });
            predictions.push(ScenePrediction {
                scene: c * batch_size.max(1) + i,
                detections,
                mae: m,
                f_beta: f,
            });
        }
    }
    if let Some(w) = wrapper {
        let reads = w.decoder_store.reads() - reads_before;
        if reads != 0 {
            return Err(HarnessError::StageGating(reads));
        }
    }
    let (ap, ap50, ap75) = if det.config.head.has_grid() {
        let s = mean_ap(&eval_images)?;
        (Some(s.ap), Some(s.ap50), Some(s.ap75))
    } else {
        (None, None, None)
    };
    let mean = |f: fn(&ScenePrediction) -> Option<f64>| {
        let v: Vec<f64> = predictions.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let metrics = EvalMetrics {
        images: scenes.len(),
        ap,
        ap50,
        ap75,
        mae: mean(|p| p.mae),
        f_beta: mean(|p| p.f_beta),
    };
    Ok(Evaluation { metrics, predictions })
}

/// Mean cosine similarity between the decoder's recovered template and the
/// applied one; `None` without a decoder.
pub fn decoder_cosine(wrapper: &mut Wrapper, scenes: &[Scene], batch_size: usize) -> Result<Option<f64>> {
    if !wrapper.has_decoder() || scenes.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for chunk in scenes.chunks(batch_size.max(1)) {
        let images: Vec<_> = chunk.iter().map(|s| &s.image).collect();
        let mut g = Graph::new();
        let x = g.constant(batch_images(&images)?);
        let s = wrapper.template(&mut g, x, Mode::Eval)?;
        let e = wrapper.encrypt(&mut g, x, s)?;
        let r = wrapper.recover(&mut g, e, Mode::Eval)?;
        let l = cosine_loss(&mut g, r, s)?;
        total += g.value(l).data().iter().map(|&v| 1.0 - v as f64).sum::<f64>();
    }
    Ok(Some(total / scenes.len() as f64))
}

/// Templates of the first `n` scenes as `H·W` maps.
pub fn template_maps(wrapper: &mut Wrapper, scenes: &[Scene], n: usize) -> Result<Vec<Vec<f32>>> {
    let picked = &scenes[..n.min(scenes.len())];
    if picked.is_empty() {
        return Ok(Vec::new());
    }
    let images: Vec<_> = picked.iter().map(|s| &s.image).collect();
    let t = wrapper.template_values(&batch_images(&images)?)?;
    let per = t.shape()[2] * t.shape()[3];
    let maps = t.data().chunks(per).map(<[f32]>::to_vec).collect::<Vec<_>>();
    Ok((0..picked.len()).map(|i| maps[i.min(maps.len() - 1)].clone()).collect())
}
