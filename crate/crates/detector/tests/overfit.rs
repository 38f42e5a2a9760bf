use proactive_autograd::{optimizer_step, Graph, Mode, OptimizerSpec};
use proactive_detector::*;
use proactive_metrics::GroundTruth;
use proactive_synth::{generate_scene, DatasetSpec, Scene};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SIZE: usize = 64;

fn scenes(n: usize) -> Vec<Scene> {
    let spec = DatasetSpec {
        image_size: SIZE,
        count: n,
        seed: 21,
        ..DatasetSpec::default()
    };
    (0..n).map(|i| generate_scene(&spec, i as u64).unwrap()).collect()
}

fn tensors(scenes: &[Scene]) -> (proactive_autograd::Tensor<f32>, proactive_autograd::Tensor<f32>, Vec<SceneTargets>) {
    let n = scenes.len();
    let mut img = Vec::with_capacity(n * 3 * SIZE * SIZE);
    let mut seg = Vec::with_capacity(n * SIZE * SIZE);
    let mut targets = Vec::with_capacity(n);
    for s in scenes {
        img.extend_from_slice(&s.image.data);
        seg.extend(s.seg_map.to_f32());
        let gts: Vec<GroundTruth> = s
            .annotations
            .iter()
            .map(|a| GroundTruth { bbox: a.bbox, class_id: a.class_id })
            .collect();
        targets.push(assign_targets(&gts, SIZE, SIZE / 8));
    }
    (
        proactive_autograd::Tensor::new(&[n, 3, SIZE, SIZE], img).unwrap(),
        proactive_autograd::Tensor::new(&[n, 1, SIZE, SIZE], seg).unwrap(),
        targets,
    )
}

#[test]
fn both_heads_overfit_thirty_two_scenes() {
    let data = scenes(32);
    let (x, seg_gt, targets) = tensors(&data);
    let cfg = DetectorConfig {
        head: HeadMode::Both,
        widths: [8, 16, 16, 32],
        ..DetectorConfig::default()
    };
    let tt = targets_tensors::<f32>(&targets, cfg.num_classes).unwrap();
    let mut det = Detector::new(cfg, SIZE, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let opt = OptimizerSpec::adaptive_moment(5e-3);
    let mut first = None;
    let mut last = (0.0, 0.0);
    for _ in 0..500 {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let sv = g.constant(seg_gt.clone());
        let out = det.forward(&mut g, xv, Mode::Train).unwrap();
        let l = detection_loss(&mut g, out.grid.unwrap(), &tt).unwrap();
        let s = segmentation_loss(&mut g, out.seg.unwrap(), sv).unwrap();
        let total = g.add(l.total, s).unwrap();
        last = (g.value(l.total).item() as f64, g.value(s).item() as f64);
        first.get_or_insert(last);
        g.backward(total).unwrap();
        det.store.zero_grads();
        det.store.accumulate_grads(&g).unwrap();
        optimizer_step(&mut det.store, &opt).unwrap();
    }
    let first = first.unwrap();
    eprintln!("detection {:.4} -> {:.4}, segmentation {:.4} -> {:.4}", first.0, last.0, first.1, last.1);
    assert!(last.0 < 0.1 * first.0, "detection loss {} -> {}", first.0, last.0);
    assert!(last.1 < 0.1 * first.1, "segmentation loss {} -> {}", first.1, last.1);
}
