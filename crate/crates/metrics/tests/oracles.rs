use proactive_metrics::{
    average_precision, f_beta, iou, mae, BBox, Detection, EvalImage, GroundTruth, MetricError,
    SegMap, IOU_THRESHOLDS,
};
use proactive_metrics::oracle::{brute_force_ap, iou_by_area};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_box(rng: &mut ChaCha8Rng, span: f64) -> BBox {
    let x1 = rng.random_range(0.0..span);
    let y1 = rng.random_range(0.0..span);
    let w = rng.random_range(0.01..span / 2.0);
    let h = rng.random_range(0.01..span / 2.0);
    BBox::new(x1, y1, x1 + w, y1 + h).unwrap()
}

#[test]
fn iou_matches_area_oracle_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10_000 {
        let a = random_box(&mut rng, 10.0);
        let b = random_box(&mut rng, 10.0);
        let expected = iou_by_area(&a, &b);
        assert!((iou(&a, &b) - expected).abs() < 1e-12, "{a:?} {b:?}");
    }
}

fn random_instance(rng: &mut ChaCha8Rng, nd: usize, ng: usize) -> Vec<EvalImage> {
    let n_images = rng.random_range(1..=2);
    let n_classes = rng.random_range(1..=2);
    let mut images = vec![EvalImage::default(); n_images];
    // Integer grid so IoU and score ties actually occur.
    let grid_box = |rng: &mut ChaCha8Rng| {
        let x1 = rng.random_range(0..4) as f64;
        let y1 = rng.random_range(0..4) as f64;
        BBox::new(x1, y1, x1 + rng.random_range(1..4) as f64, y1 + rng.random_range(1..4) as f64).unwrap()
    };
    for _ in 0..ng {
        let i = rng.random_range(0..n_images);
        let g = GroundTruth { bbox: grid_box(rng), class_id: rng.random_range(0..n_classes) };
        images[i].ground_truths.push(g);
    }
    for _ in 0..nd {
        let i = rng.random_range(0..n_images);
        let d = Detection {
            bbox: grid_box(rng),
            class_id: rng.random_range(0..n_classes),
            score: rng.random_range(1..5) as f64 / 5.0,
        };
        images[i].detections.push(d);
    }
    images
}

#[test]
fn average_precision_matches_brute_force_on_all_small_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for nd in 0..=6 {
        for ng in 0..=4 {
            for _ in 0..300 {
                let images = random_instance(&mut rng, nd, ng);
                for thr in [0.1, 0.5, 0.75] {
                    match (average_precision(&images, thr), brute_force_ap(&images, thr)) {
                        (Ok(a), Some(b)) => {
                            assert!((a - b).abs() < 1e-10, "{a} vs {b} on {images:?}");
                            checked += 1;
                        }
                        (Err(MetricError::NothingToEvaluate), None) => {}
                        other => panic!("disagreement {other:?} on {images:?}"),
                    }
                }
            }
        }
    }
    assert!(checked > 20_000);
}

#[test]
fn f_beta_matches_confusion_matrix() {
    // gt has one positive; the prediction marks two pixels: P = 0.5, R = 1
    let gt = SegMap::from_bits(2, 2, vec![true, false, false, false]).unwrap();
    let f = f_beta(&[1.0, 1.0, 0.0, 0.0], &gt, 0.3).unwrap();
    let (p, r, b2) = (0.5, 1.0, 0.3);
    let expected = (1.0 + b2) * p * r / (b2 * p + r);
    assert!((f - expected).abs() < 1e-12);
    assert!((f - 0.5652).abs() < 1e-4);
}

fn boxes() -> impl Strategy<Value = BBox> {
    (0.0..20.0f64, 0.0..20.0f64, 0.01..10.0f64, 0.01..10.0f64)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

fn scored_instance() -> impl Strategy<Value = Vec<EvalImage>> {
    (
        prop::collection::vec((boxes(), 0..2usize, 0.0..1.0f64), 0..8),
        prop::collection::vec((boxes(), 0..2usize), 1..5),
    )
        .prop_map(|(d, g)| {
            vec![EvalImage {
                detections: d.into_iter().map(|(bbox, class_id, score)| Detection { bbox, class_id, score }).collect(),
                ground_truths: g.into_iter().map(|(bbox, class_id)| GroundTruth { bbox, class_id }).collect(),
            }]
        })
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in boxes(), b in boxes()) {
        let ab = iou(&a, &b);
        prop_assert_eq!(ab, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ap_never_increases_with_threshold(images in scored_instance()) {
        let mut prev = f64::INFINITY;
        for &t in IOU_THRESHOLDS.iter() {
            let ap = average_precision(&images, t).unwrap();
            prop_assert!(ap <= prev + 1e-12, "{} after {} at {}", ap, prev, t);
            prev = ap;
        }
    }

    #[test]
    fn mae_triangle_inequality(
        v in prop::collection::vec((0.0..1.0f32, 0.0..1.0f32, 0.0..1.0f32), 1..64)
    ) {
        let p: Vec<f32> = v.iter().map(|t| t.0).collect();
        let q: Vec<f32> = v.iter().map(|t| t.1).collect();
        let g: Vec<f32> = v.iter().map(|t| t.2).collect();
        prop_assert!(mae(&p, &g).unwrap() <= mae(&p, &q).unwrap() + mae(&q, &g).unwrap() + 1e-9);
    }
}
