use proactive_metrics::iou;
use proactive_synth::{
    generate_scene, pseudo_seg_from_boxes, read_dataset, write_dataset, BBox, Dataset, DatasetSpec,
    FormatError, Scene, CHANNELS,
};
use proptest::prelude::*;

fn spec(chi: f64, count: usize) -> DatasetSpec {
    DatasetSpec {
        camouflage_level: chi,
        count,
        seed: 42,
        ..Default::default()
    }
}

/// Mean over channels of |mean(object interior) - mean(background pixels)|,
/// averaged over the objects of the scene.
fn contrast(scene: &Scene) -> f64 {
    let img = &scene.image;
    let n = img.width;
    let mut total = 0.0;
    for a in &scene.annotations {
        let inside = pseudo_seg_from_boxes(&[a.bbox], n, n);
        let mut per_channel = 0.0;
        for c in 0..CHANNELS {
            let (mut si, mut ni, mut sb, mut nb) = (0.0, 0, 0.0, 0);
            for y in 0..n {
                for x in 0..n {
                    let v = img.at(c, x, y) as f64;
                    if inside.get(x, y) {
                        si += v;
                        ni += 1;
                    } else if !scene.seg_map.get(x, y) {
                        sb += v;
                        nb += 1;
                    }
                }
            }
            per_channel += (si / ni as f64 - sb / nb as f64).abs();
        }
        total += per_channel / CHANNELS as f64;
    }
    total / scene.annotations.len() as f64
}

fn mean_contrast(chi: f64) -> f64 {
    let s = DatasetSpec { objects_per_image: (1, 3), ..spec(chi, 100) };
    (0..100).map(|i| contrast(&generate_scene(&s, i).unwrap())).sum::<f64>() / 100.0
}

#[test]
fn generic_scenes_have_visible_objects() {
    let c = mean_contrast(0.0);
    assert!(c >= 0.2, "contrast {c}");
}

#[test]
fn camouflaged_scenes_blend_in() {
    let c = mean_contrast(1.0);
    assert!(c <= 0.05, "contrast {c}");
}

#[test]
fn generation_is_deterministic() {
    let s = spec(0.5, 1);
    assert_eq!(generate_scene(&s, 3).unwrap(), generate_scene(&s, 3).unwrap());
    assert_ne!(generate_scene(&s, 3).unwrap(), generate_scene(&s, 4).unwrap());
}

#[test]
fn annotations_satisfy_box_invariants() {
    let s = spec(0.3, 300);
    let n = s.image_size as f64;
    for i in 0..300 {
        let scene = generate_scene(&s, i).unwrap();
        let boxes: Vec<BBox> = scene.annotations.iter().map(|a| a.bbox).collect();
        for (k, b) in boxes.iter().enumerate() {
            assert!(b.is_valid());
            assert!(b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= n && b.y2 <= n);
            for other in &boxes[k + 1..] {
                assert!(iou(b, other) < 0.5);
            }
        }
        assert_eq!(pseudo_seg_from_boxes(&boxes, s.image_size, s.image_size), scene.seg_map);
        assert!(scene.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn class_frequencies_are_uniform() {
    let s = DatasetSpec { image_size: 32, ..spec(0.0, 1200) };
    let mut counts = vec![0usize; s.num_classes];
    for i in 0..1200 {
        for a in generate_scene(&s, i).unwrap().annotations {
            counts[a.class_id] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let p = 1.0 / s.num_classes as f64;
    let expected = total as f64 * p;
    let sd = (total as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - expected).abs() <= 3.0 * sd, "{c} vs {expected} ± {sd}");
    }
}

#[test]
fn dataset_round_trip_and_reproducible_bytes() {
    let ds = Dataset::generate(&spec(0.9, 10)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.bin");
    write_dataset(&ds, &path).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back, ds);
    let again = Dataset::generate(&spec(0.9, 10)).unwrap();
    assert_eq!(again.to_bytes(), std::fs::read(&path).unwrap());
}

#[test]
fn truncated_file_is_reported() {
    let bytes = Dataset::generate(&spec(0.0, 3)).unwrap().to_bytes();
    for cut in [bytes.len() - 1, bytes.len() - 40, bytes.len() / 2, 30] {
        let err = Dataset::from_bytes(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, FormatError::Truncated(_)), "cut {cut}: {err:?}");
    }
}

#[test]
fn header_count_disagreeing_with_records() {
    let ds = Dataset::generate(&spec(0.0, 4)).unwrap();
    let bytes = ds.to_bytes();
    let text = String::from_utf8_lossy(&bytes[..400]).into_owned();
    let at = text.find("count 4").unwrap();
    let mut edited = bytes.clone();
    edited[at + 6] = b'5';
    assert!(matches!(
        Dataset::from_bytes(&edited),
        Err(FormatError::Count { header: 5, found: 4 })
    ));
}

#[test]
fn version_and_checksum_errors_are_distinct() {
    let bytes = Dataset::generate(&spec(0.0, 2)).unwrap().to_bytes();
    let mut v2 = bytes.clone();
    v2[18] = b'2';
    assert!(matches!(Dataset::from_bytes(&v2), Err(FormatError::Version { found: 2 })));
    let mut flipped = bytes.clone();
    let mid = bytes.len() - 100;
    flipped[mid] ^= 0x40;
    assert!(matches!(Dataset::from_bytes(&flipped), Err(FormatError::Checksum)));
    assert!(matches!(Dataset::from_bytes(b"hello 1\n"), Err(FormatError::BadMagic)));
}

fn box_set() -> impl Strategy<Value = Vec<BBox>> {
    prop::collection::vec(
        (0.0..12.0f64, 0.0..12.0f64, 0.1..8.0f64, 0.1..8.0f64)
            .prop_map(|(x, y, w, h)| BBox { x1: x, y1: y, x2: x + w, y2: y + h }),
        0..5,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]
    #[test]
    fn pseudo_map_is_inclusive_membership(boxes in box_set()) {
        let (h, w) = (12, 14);
        let map = pseudo_seg_from_boxes(&boxes, h, w);
        for n in 0..h {
            for m in 0..w {
                let (mf, nf) = (m as f64, n as f64);
                let inside = boxes.iter().any(|b| b.x1 <= mf && mf <= b.x2 && b.y1 <= nf && nf <= b.y2);
                prop_assert_eq!(map.get(m, n), inside);
            }
        }
    }
}
