//! Randomized property tests over the geometry, post-processing and metric
//! invariants that the rest of the system leans on.

use proptest::prelude::*;

use periscan::classification::{softmax, CaseLabel};
use periscan::detection::{iou, nms, Angulation, BBox, Detection, Quadrant};
use periscan::imaging::{hflip, invert_box, letterbox_transform, rotate, RadiographImage};
use periscan::metrics::roc_auc;

fn arb_box(max: f64) -> impl Strategy<Value = BBox> {
    (0.0..max, 0.0..max, 1.0..40.0, 1.0..40.0)
        .prop_map(|(x1, y1, w, h)| BBox { x1, y1, x2: x1 + w, y2: y1 + h })
}

fn arb_detection() -> impl Strategy<Value = Detection> {
    (arb_box(200.0), 0usize..4, 0usize..4, 0.0f64..=1.0).prop_map(|(bbox, q, a, confidence)| {
        Detection {
            bbox,
            quadrant: Quadrant::ALL[q],
            angulation: Angulation::ALL[a],
            confidence,
        }
    })
}

proptest! {
    #[test]
    fn letterbox_box_roundtrip(
        w in 8usize..2000,
        h in 8usize..2000,
        fx1 in 0.0f64..1.0,
        fy1 in 0.0f64..1.0,
        fx2 in 0.0f64..1.0,
        fy2 in 0.0f64..1.0,
    ) {
        let t = letterbox_transform(w, h, 832).unwrap();
        let b = BBox {
            x1: fx1.min(fx2) * w as f64,
            y1: fy1.min(fy2) * h as f64,
            x2: fx1.max(fx2) * w as f64,
            y2: fy1.max(fy2) * h as f64,
        };
        let back = invert_box(&t.forward_box(&b), &t);
        prop_assert!((b.x1 - back.x1).abs() < 1e-6);
        prop_assert!((b.y1 - back.y1).abs() < 1e-6);
        prop_assert!((b.x2 - back.x2).abs() < 1e-6);
        prop_assert!((b.y2 - back.y2).abs() < 1e-6);
    }

    #[test]
    fn iou_symmetric_in_unit_range(a in arb_box(150.0), b in arb_box(150.0)) {
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nms_subset_sorted_idempotent(
        dets in proptest::collection::vec(arb_detection(), 0..25),
        thr in 0.0f64..=1.0,
    ) {
        let kept = nms(&dets, thr);
        prop_assert!(kept.len() <= dets.len());
        for k in &kept {
            prop_assert!(dets.iter().any(|d| d == k));
        }
        for w in kept.windows(2) {
            prop_assert!(w[0].confidence >= w[1].confidence);
        }
        prop_assert_eq!(nms(&kept, thr), kept);
    }

    #[test]
    fn auc_invariant_under_monotone_transform(
        scores in proptest::collection::vec(0.0f64..1.0, 2..60),
        labels in proptest::collection::vec(any::<bool>(), 60),
    ) {
        let truths: Vec<CaseLabel> = scores
            .iter()
            .zip(&labels)
            .map(|(_, &b)| if b { CaseLabel::Pericoronitis } else { CaseLabel::Normal })
            .collect();
        let pos = truths.iter().filter(|&&t| t == CaseLabel::Pericoronitis).count();
        prop_assume!(pos > 0 && pos < truths.len());
        let base = roc_auc(&scores, &truths).unwrap().auc;
        // strictly increasing transforms preserve the score ordering
        let warped: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp() + s).collect();
        let after = roc_auc(&warped, &truths).unwrap().auc;
        prop_assert!((base - after).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariant_and_normalized(
        a in -50.0f64..50.0,
        b in -50.0f64..50.0,
        c in -100.0f64..100.0,
    ) {
        let s = softmax([a, b]);
        prop_assert!((s.p_normal + s.p_pericoronitis - 1.0).abs() < 1e-12);
        let t = softmax([a + c, b + c]);
        prop_assert!((s.p_normal - t.p_normal).abs() < 1e-12);
    }

    #[test]
    fn flip_and_rotate_are_involutions(
        w in 2usize..40,
        h in 2usize..40,
        seed in any::<u64>(),
        bx in arb_box(20.0),
    ) {
        // deterministic pseudo-random pixels from the seed
        let px: Vec<f64> = (0..w * h)
            .map(|i| ((seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) >> 33) % 256) as f64 / 255.0)
            .collect();
        let img = RadiographImage::new(w, h, 1, px).unwrap();
        let b = BBox {
            x1: bx.x1.min(w as f64 - 1.0),
            y1: bx.y1.min(h as f64 - 1.0),
            x2: bx.x2.min(w as f64),
            y2: bx.y2.min(h as f64),
        };
        prop_assume!(b.x2 > b.x1 && b.y2 > b.y1);

        let (f1, fb1) = hflip(&img, &[b]);
        let (f2, fb2) = hflip(&f1, &fb1);
        prop_assert_eq!(&f2, &img);
        prop_assert!((fb2[0].x1 - b.x1).abs() < 1e-12);

        let (r1, rb1) = rotate(&img, &[b], 180).unwrap();
        let (r2, rb2) = rotate(&r1, &rb1, 180).unwrap();
        prop_assert_eq!(&r2, &img);
        prop_assert!((rb2[0].y2 - b.y2).abs() < 1e-12);

        // 90 + 270 also composes to the identity
        let (q1, qb1) = rotate(&img, &[b], 90).unwrap();
        let (q2, qb2) = rotate(&q1, &qb1, 270).unwrap();
        prop_assert_eq!(&q2, &img);
        prop_assert!((qb2[0].x1 - b.x1).abs() < 1e-12);
    }
}
