use proactive_autograd::{optimizer_step, Graph, Mode, OptimizerSpec, ParamStore, Var};
use proactive_detector::{detection_loss, segmentation_loss, Detector, DetectorOutput};
use proactive_wrapper::{loss_decoder, loss_encoder, total_loss, LossWeights, TemplateMode, TransformMode, Wrapper, WrapperConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{make_batch, Batch, BatchSampler, Datasets};
use crate::report::{LossPoint, Schedule};
use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Pretraining only.
    Passive,
    ImageDependent,
    Fixed,
    UniversalLearnable,
    NoDecoder,
    AdditiveTransform,
    /// Passive training continued for the fine-tuning budget.
    #[serde(rename = "passive_2x")]
    Passive2x,
}

pub const ABLATION_ARMS: [Arm; 6] = [
    Arm::ImageDependent,
    Arm::Fixed,
    Arm::UniversalLearnable,
    Arm::NoDecoder,
    Arm::AdditiveTransform,
    Arm::Passive2x,
];

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Passive => "passive",
            Self::ImageDependent => "image_dependent",
            Self::Fixed => "fixed",
            Self::UniversalLearnable => "universal_learnable",
            Self::NoDecoder => "no_decoder",
            Self::AdditiveTransform => "additive_transform",
            Self::Passive2x => "passive_2x",
        }
    }

    /// Wrapper used by this arm, derived from the configured one.
    pub fn wrapper_config(self, base: &WrapperConfig) -> Option<WrapperConfig> {
        let mut c = base.clone();
        match self {
            Self::Passive | Self::Passive2x => return None,
            Self::ImageDependent => {}
            Self::Fixed => c.template_mode = TemplateMode::Fixed,
            Self::UniversalLearnable => c.template_mode = TemplateMode::UniversalLearnable,
            Self::NoDecoder => c.use_decoder = false,
            Self::AdditiveTransform => c.transform_mode = TransformMode::Add,
        }
        Some(c)
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

const STREAM_DETECTOR_INIT: u64 = 1;
const STREAM_PRETRAIN_ORDER: u64 = 2;
const STREAM_WRAPPER_INIT: u64 = 3;
const STREAM_FINETUNE_ORDER: u64 = 4;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub j: f64,
    pub j_obj: f64,
    pub j_e: f64,
    pub j_d: f64,
}

fn objective(g: &mut Graph<f32>, out: DetectorOutput, batch: &Batch) -> Result<Var> {
    let det = match out.grid {
        Some(grid) => Some(detection_loss(g, grid, &batch.targets)?.total),
        None => None,
    };
    let seg = match out.seg {
        Some(seg) => {
            let gt = g.constant(batch.maps.clone());
            Some(segmentation_loss(g, seg, gt)?)
        }
        None => None,
    };
    Ok(match (det, seg) {
        (Some(d), Some(s)) => g.add(d, s)?,
        (Some(v), None) | (None, Some(v)) => v,
        (None, None) => unreachable!("detector has at least one head"),
    })
}

fn update(store: &mut ParamStore<f32>, g: &Graph<f32>, opt: &OptimizerSpec) -> Result<()> {
    store.zero_grads();
    store.accumulate_grads(g)?;
    if store.trainable_count() > 0 {
        optimizer_step(store, opt)?;
    }
    Ok(())
}

/// One minibatch of the joint objective followed by an optimizer step per
/// parameter group. Without a wrapper this is plain detector training.
pub fn train_step(
    det: &mut Detector,
    wrapper: Option<&mut Wrapper>,
    batch: &Batch,
    detector_opt: &OptimizerSpec,
    wrapper_opt: &OptimizerSpec,
) -> Result<StepLosses> {
    let mut g = Graph::new();
    let x = g.constant(batch.images.clone());
    let mut wrapper = wrapper;
    let (input, template) = match wrapper.as_deref_mut() {
        Some(w) => {
            let s = w.template(&mut g, x, Mode::Train)?;
            (w.encrypt(&mut g, x, s)?, Some(s))
        }
        None => (x, None),
    };
    let out = det.forward(&mut g, input, Mode::Train)?;
    let j_obj = objective(&mut g, out, batch)?;
    let (j_e, j_d, weights) = match (wrapper.as_deref_mut(), template) {
        (Some(w), Some(s)) => {
            let gt = g.constant(batch.maps.clone());
            let j_e = loss_encoder(&mut g, s, gt)?;
            let j_d = if w.has_decoder() {
                let r = w.recover(&mut g, input, Mode::Train)?;
                Some(loss_decoder(&mut g, r, s)?)
            } else {
                None
            };
            (Some(j_e), j_d, w.config.loss_weights)
        }
        _ => (None, None, LossWeights::PASSIVE),
    };
    let total = total_loss(&mut g, j_obj, j_e, j_d, &weights)?;
    let losses = StepLosses {
        j: g.value(total).item() as f64,
        j_obj: g.value(j_obj).item() as f64,
        j_e: j_e.map_or(0.0, |v| g.value(v).item() as f64),
        j_d: j_d.map_or(0.0, |v| g.value(v).item() as f64),
    };
    if !losses.j.is_finite() {
        return Err(proactive_wrapper::WrapperError::NonFinite("total").into());
    }
    g.backward(total)?;
    update(&mut det.store, &g, detector_opt)?;
    if let Some(w) = wrapper {
        update(&mut w.encoder_store, &g, wrapper_opt)?;
        update(&mut w.decoder_store, &g, wrapper_opt)?;
    }
    Ok(losses)
}

/// Called with the 1-based iteration after every step.
pub type CheckpointHook<'a> = dyn FnMut(usize, &Detector, Option<&Wrapper>) -> Result<()> + 'a;

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub arm: Arm,
    pub detector: Detector,
    pub wrapper: Option<Wrapper>,
    pub loss_curve: Vec<LossPoint>,
    pub schedule: Schedule,
}

fn is_non_finite(e: &HarnessError) -> bool {
    matches!(
        e,
        HarnessError::Wrapper(proactive_wrapper::WrapperError::NonFinite(_))
            | HarnessError::Detector(proactive_detector::DetectorError::NonFinite(_))
    )
}

#[allow(clippy::too_many_arguments)]
fn run_loop(
    cfg: &ExperimentConfig,
    data: &Datasets,
    det: &mut Detector,
    mut wrapper: Option<&mut Wrapper>,
    sampler: &mut BatchSampler,
    first_step: usize,
    steps: usize,
    hook: &mut Option<&mut CheckpointHook<'_>>,
) -> Result<Vec<LossPoint>> {
    let t = &cfg.training;
    let mut curve = Vec::new();
    let mut acc = StepLosses::default();
    let mut count = 0usize;
    for k in 0..steps {
        let iteration = first_step + k + 1;
        let idx = sampler.next_batch(t.batch_size);
        let batch = make_batch(&data.train.scenes, &idx, cfg.detector.num_classes)?;
        let l = train_step(det, wrapper.as_deref_mut(), &batch, &t.detector_optimizer, &t.wrapper_optimizer)
            .map_err(|e| {
                if is_non_finite(&e) {
                    HarnessError::NonFinite {
                        iteration,
                        source: Box::new(e),
                    }
                } else {
                    e
                }
            })?;
        acc.j += l.j;
        acc.j_obj += l.j_obj;
        acc.j_e += l.j_e;
        acc.j_d += l.j_d;
        count += 1;
        if count == t.log_every || k + 1 == steps {
            let n = count as f64;
            curve.push(LossPoint {
                step: iteration,
                j: acc.j / n,
                j_obj: acc.j_obj / n,
                j_e: acc.j_e / n,
                j_d: acc.j_d / n,
            });
            acc = StepLosses::default();
            count = 0;
        }
        if let Some(h) = hook.as_deref_mut() {
            h(iteration, det, wrapper.as_deref())?;
        }
    }
    Ok(curve)
}

/// Passive detector training for the pretraining share of the budget.
pub fn pretrain(cfg: &ExperimentConfig, data: &Datasets, mut hook: Option<&mut CheckpointHook<'_>>) -> Result<TrainOutput> {
    let size = cfg.data.scenes.image_size;
    let mut det = Detector::new(cfg.detector.clone(), size, &mut stream_rng(cfg.seed, STREAM_DETECTOR_INIT))?;
    let mut sampler = BatchSampler::new(data.train.scenes.len(), stream_rng(cfg.seed, STREAM_PRETRAIN_ORDER));
    let p = cfg.training.pretrain_steps();
    let loss_curve = run_loop(cfg, data, &mut det, None, &mut sampler, 0, p, &mut hook)?;
    Ok(TrainOutput {
        arm: Arm::Passive,
        detector: det,
        wrapper: None,
        loss_curve,
        schedule: Schedule::new(&cfg.training, Arm::Passive),
    })
}

/// Continues from the pretrained detector for the fine-tuning share: with
/// the arm's wrapper, or passively for [`Arm::Passive2x`]. All arms of one
/// seed see the same batch order.
pub fn fine_tune(
    cfg: &ExperimentConfig,
    data: &Datasets,
    arm: Arm,
    pretrained: &Detector,
    mut hook: Option<&mut CheckpointHook<'_>>,
) -> Result<TrainOutput> {
    if arm == Arm::Passive {
        return Err(HarnessError::Config("the passive arm has no fine-tuning stage".into()));
    }
    let mut det = pretrained.clone();
    let mut wrapper = match arm.wrapper_config(&cfg.wrapper) {
        Some(wc) => Some(Wrapper::new(
            wc,
            cfg.data.scenes.image_size,
            &mut stream_rng(cfg.seed, STREAM_WRAPPER_INIT),
        )?),
        None => None,
    };
    let mut sampler = BatchSampler::new(data.train.scenes.len(), stream_rng(cfg.seed, STREAM_FINETUNE_ORDER));
    let p = cfg.training.pretrain_steps();
    let f = cfg.training.finetune_steps();
    let loss_curve = run_loop(cfg, data, &mut det, wrapper.as_mut(), &mut sampler, p, f, &mut hook)?;
    Ok(TrainOutput {
        arm,
        detector: det,
        wrapper,
        loss_curve,
        schedule: Schedule::new(&cfg.training, arm),
    })
}
