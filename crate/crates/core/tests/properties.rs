use proptest::prelude::*;

use yolokit::dataset::synth::{generate_synthetic_scene, SceneSpec};
use yolokit::dataset::{
    aggregate_csv, flip, parse_csv, read_ppm, read_yolo_labels, rotate, write_csv, write_ppm, write_yolo_labels, ClassRegistry,
    FlipAxis, Image, Label, RotateOptions,
};
use yolokit::evalkit::{average_precision, match_detections, EvalDetection, GroundTruth, ImageEval};
use yolokit::geometry::{iou, BoxCorner, BoxNorm};
use yolokit::postprocess::{nms, Detection, NmsConfig, ScoreSource};

fn corner() -> impl Strategy<Value = BoxCorner> {
    (0.0..400.0f64, 0.0..400.0f64, 1.0..120.0f64, 1.0..120.0f64).prop_map(|(x, y, w, h)| BoxCorner::new(x, y, x + w, y + h))
}

fn detection(b: BoxCorner, conf: u8, class_id: usize) -> Detection {
    let confidence = f64::from(conf) / 16.0;
    Detection {
        bbox: b,
        class_id,
        class_name: format!("c{class_id}"),
        objectness: confidence,
        class_score: 1.0,
        confidence,
    }
}

/// Greedy suppression written as plainly as possible.
fn brute_nms(dets: &[Detection], cfg: &NmsConfig) -> Vec<Detection> {
    let score = |d: &Detection| match cfg.score_source {
        ScoreSource::Confidence => d.confidence,
        ScoreSource::Objectness => d.objectness,
    };
    let mut idx: Vec<usize> = (0..dets.len()).filter(|&i| score(&dets[i]) >= cfg.objectness_threshold).collect();
    // Insertion sort keeps equal scores in input order.
    for i in 1..idx.len() {
        let mut j = i;
        while j > 0 && score(&dets[idx[j - 1]]) < score(&dets[idx[j]]) {
            idx.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut kept: Vec<usize> = Vec::new();
    for i in idx {
        let blocked = kept.iter().any(|&k| {
            (!cfg.per_class || dets[k].class_id == dets[i].class_id) && iou(&dets[k].bbox, &dets[i].bbox) >= cfg.iou_threshold
        });
        if !blocked {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i].clone()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn iou_is_symmetric_and_bounded(a in corner(), b in corner()) {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn indexed_nms_matches_brute_force_on_large_sets(
        boxes in prop::collection::vec((corner(), 0u8..=16, 0usize..3), 64..400),
        t in prop::sample::select(vec![0.0, 0.1, 0.3, 0.45, 0.5, 0.7, 0.95, 1.0]),
        per_class in any::<bool>(),
    ) {
        let dets: Vec<Detection> = boxes.into_iter().map(|(b, c, k)| detection(b, c, k)).collect();
        let cfg = NmsConfig { objectness_threshold: 0.25, iou_threshold: t, per_class, ..NmsConfig::default() };
        prop_assert_eq!(nms(&dets, &cfg), brute_nms(&dets, &cfg));
    }

    #[test]
    fn kept_boxes_never_overlap_past_threshold(boxes in prop::collection::vec((corner(), 0u8..=16, 0usize..2), 0..80)) {
        let dets: Vec<Detection> = boxes.into_iter().map(|(b, c, k)| detection(b, c, k)).collect();
        let cfg = NmsConfig::default();
        let kept = nms(&dets, &cfg);
        for (i, a) in kept.iter().enumerate() {
            prop_assert!(a.confidence >= cfg.objectness_threshold);
            for b in &kept[i + 1..] {
                prop_assert!(iou(&a.bbox, &b.bbox) < cfg.iou_threshold);
                prop_assert!(a.confidence >= b.confidence);
            }
        }
    }
}

fn eval_instance() -> impl Strategy<Value = Vec<ImageEval>> {
    let image = (
        prop::collection::vec((corner(), 0usize..2), 0..6),
        prop::collection::vec((0usize..6, -6.0..6.0f64, -6.0..6.0f64, 0u8..=10, 0usize..2), 0..8),
    )
        .prop_map(|(gts, dets)| {
            let truths: Vec<GroundTruth> = gts.iter().map(|&(b, c)| GroundTruth { class_id: c, bbox: b }).collect();
            let detections = dets
                .iter()
                .map(|&(g, dx, dy, conf, c)| {
                    let base = truths.get(g).map_or(BoxCorner::new(50.0, 50.0, 90.0, 90.0), |t| t.bbox);
                    EvalDetection {
                        class_id: c,
                        confidence: f64::from(conf) / 10.0,
                        bbox: BoxCorner::new(base.x_min + dx, base.y_min + dy, base.x_max + dx, base.y_max + dy),
                    }
                })
                .collect();
            ImageEval { detections, truths }
        });
    prop::collection::vec(image, 1..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn ap_never_rises_with_threshold(images in eval_instance(), class_id in 0usize..2) {
        let mut last = f64::INFINITY;
        for t in yolokit::evalkit::iou_thresholds() {
            let ap = average_precision(&images, class_id, t);
            prop_assert!((0.0..=1.0).contains(&ap));
            prop_assert!(ap <= last + 1e-15);
            last = ap;
        }
    }

    #[test]
    fn trailing_false_positive_never_helps(images in eval_instance(), class_id in 0usize..2) {
        let before = average_precision(&images, class_id, 0.5);
        let mut more = images.clone();
        let lowest = images.iter().flat_map(|i| i.detections.iter().map(|d| d.confidence)).fold(1.0f64, f64::min);
        more[0].detections.push(EvalDetection {
            class_id,
            confidence: lowest / 2.0,
            bbox: BoxCorner::new(900.0, 900.0, 950.0, 950.0),
        });
        prop_assert!(average_precision(&more, class_id, 0.5) <= before);
    }

    #[test]
    fn duplicating_and_reordering_images_keeps_ap(images in eval_instance(), class_id in 0usize..2, t in 0usize..10) {
        let threshold = yolokit::evalkit::iou_thresholds()[t];
        let ap = average_precision(&images, class_id, threshold);
        let doubled: Vec<ImageEval> = images.iter().chain(&images).cloned().collect();
        prop_assert!((average_precision(&doubled, class_id, threshold) - ap).abs() < 1e-12);
        let reversed: Vec<ImageEval> = images.iter().rev().cloned().collect();
        prop_assert_eq!(average_precision(&reversed, class_id, threshold), ap);
    }

    #[test]
    fn no_truth_is_matched_twice(images in eval_instance()) {
        for img in &images {
            let m = match_detections(&img.detections, &img.truths, 0.3);
            let mut seen = vec![false; img.truths.len()];
            for dm in &m.detections {
                if let Some(g) = dm.gt {
                    prop_assert!(!seen[g]);
                    seen[g] = true;
                    prop_assert!(dm.iou >= 0.3);
                    prop_assert_eq!(img.detections[dm.detection].class_id, img.truths[g].class_id);
                }
            }
            prop_assert_eq!(seen, m.gt_matched);
        }
    }
}

fn small_scene(seed: u64) -> yolokit::dataset::LabeledImage {
    let spec = SceneSpec {
        canvas: 96,
        size_range: 8..=30,
        count_range: 1..=4,
        min_gap: 1,
        class_pool: vec![],
    };
    generate_synthetic_scene(seed, &ClassRegistry::components(), &spec).unwrap().sample
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn augmented_labels_stay_valid(seed in 0u64..1000, degrees in -720.0..720.0f64, clockwise in any::<bool>()) {
        let s = small_scene(seed);
        for out in [rotate(&s, degrees, clockwise, &RotateOptions::default()), flip(&s, FlipAxis::Vertical)] {
            prop_assert_eq!((out.image.width(), out.image.height()), (96, 96));
            for l in &out.labels {
                prop_assert!(l.bbox.is_valid(), "{:?}", l.bbox);
            }
        }
    }

    #[test]
    fn csv_is_a_fixed_point(seeds in prop::collection::vec(0u64..500, 0..5)) {
        let reg = ClassRegistry::components();
        let mut data: Vec<_> = seeds.iter().map(|&s| small_scene(s)).collect();
        for (i, d) in data.iter_mut().enumerate() {
            d.source_path = format!("dir/img, {i}.ppm");
        }
        let first = aggregate_csv(&data, &reg);
        let rows = parse_csv(&first).unwrap();
        prop_assert_eq!(write_csv(&rows), first);
    }

    #[test]
    fn yolo_labels_and_ppm_round_trip(
        labels in prop::collection::vec((0usize..13, 0.0..1.0f64, 0.0..1.0f64, 0.001..1.0f64, 0.001..1.0f64), 0..10),
        pixels in prop::collection::vec(any::<u8>(), 48),
    ) {
        let reg = ClassRegistry::components();
        let labels: Vec<Label> = labels.into_iter().map(|(c, x, y, w, h)| Label::new(c, BoxNorm::new(x, y, w, h))).collect();
        let text = write_yolo_labels(&labels);
        let back = read_yolo_labels(&text, &reg).unwrap();
        for (a, b) in labels.iter().zip(&back) {
            prop_assert_eq!(a.class_id, b.class_id);
            prop_assert!((a.bbox.cx - b.bbox.cx).abs() <= 5e-7 && (a.bbox.w - b.bbox.w).abs() <= 5e-7);
        }
        prop_assert_eq!(write_yolo_labels(&back), text);

        let img = Image::new(4, 4, pixels).unwrap();
        let bytes = write_ppm(&img);
        prop_assert_eq!(write_ppm(&read_ppm(&bytes).unwrap()), bytes);
    }
}
