use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ts3d_core::eval::{average_precision, bev_iou, iou_3d, FrameBox, IouMode, RotatedBox, RECALL_POINTS};

fn random_box(rng: &mut ChaCha8Rng) -> RotatedBox {
    RotatedBox {
        x: rng.gen_range(-1.5..1.5),
        z: rng.gen_range(-1.5..1.5),
        l: rng.gen_range(0.5..4.0),
        w: rng.gen_range(0.5..2.5),
        ry: rng.gen_range(-PI..PI),
        y: 1.65,
        h: 1.5,
    }
}

fn inside(b: &RotatedBox, x: f64, z: f64) -> bool {
    let (c, s) = (b.ry.cos(), b.ry.sin());
    let (dx, dz) = (x - b.x, z - b.z);
    let (lx, ly) = (c * dx - s * dz, s * dx + c * dz);
    lx.abs() <= b.l / 2.0 && ly.abs() <= b.w / 2.0
}

/// Jittered-grid rasterisation of both footprints.
fn raster_iou(a: &RotatedBox, b: &RotatedBox, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let reach = |r: &RotatedBox| (r.l.hypot(r.w)) / 2.0;
    let (x0, x1) = ((a.x - reach(a)).min(b.x - reach(b)), (a.x + reach(a)).max(b.x + reach(b)));
    let (z0, z1) = ((a.z - reach(a)).min(b.z - reach(b)), (a.z + reach(a)).max(b.z + reach(b)));
    let (dx, dz) = ((x1 - x0) / n as f64, (z1 - z0) / n as f64);
    let (mut both, mut either) = (0u64, 0u64);
    for i in 0..n {
        for j in 0..n {
            let x = x0 + (i as f64 + rng.gen::<f64>()) * dx;
            let z = z0 + (j as f64 + rng.gen::<f64>()) * dz;
            let (ia, ib) = (inside(a, x, z), inside(b, x, z));
            both += u64::from(ia && ib);
            either += u64::from(ia || ib);
        }
    }
    both as f64 / either as f64
}

#[test]
fn bev_iou_matches_rasterisation() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        let exact = bev_iou(&a, &b).unwrap();
        let approx = raster_iou(&a, &b, 1500, &mut rng);
        worst = worst.max((exact - approx).abs());
    }
    assert!(worst < 1e-3, "worst deviation {worst:e}");
}

proptest! {
    #[test]
    fn bev_iou_is_symmetric_and_rigid_motion_invariant(seed in 0u64..1_000_000, theta in -PI..PI, tx in -20.0f64..20.0, tz in -20.0f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        let v = bev_iou(&a, &b).unwrap();
        prop_assert!((v - bev_iou(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&v));
        let (c, s) = (theta.cos(), theta.sin());
        let moved = |r: &RotatedBox| RotatedBox { x: c * r.x + s * r.z + tx, z: -s * r.x + c * r.z + tz, ry: r.ry + theta, ..*r };
        prop_assert!((v - bev_iou(&moved(&a), &moved(&b)).unwrap()).abs() < 1e-9);
        let flipped = RotatedBox { ry: a.ry + PI, ..a };
        prop_assert!((bev_iou(&a, &flipped).unwrap() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn stacked_boxes_with_half_vertical_overlap() {
    let a = RotatedBox { x: 1.0, z: 10.0, l: 4.0, w: 2.0, ry: 0.3, y: 1.0, h: 2.0 };
    let b = RotatedBox { y: 0.0, ..a };
    assert!((iou_3d(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert!((bev_iou(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    let apart = RotatedBox { y: -5.0, ..a };
    assert_eq!(iou_3d(&a, &apart).unwrap(), 0.0);
}

#[test]
fn degenerate_boxes_are_rejected() {
    let a = RotatedBox { x: 0.0, z: 0.0, l: 0.0, w: 1.0, ry: 0.0, y: 0.0, h: 1.0 };
    assert!(bev_iou(&a, &a).is_err());
}

/// Exhaustive reference: match in score order against a precomputed IoU
/// table, then take the best precision over every prefix of the ranking
/// that reaches each recall point.
fn brute_force_ap(preds: &[FrameBox], gts: &[FrameBox], thr: f64) -> f64 {
    let n_gt = gts.iter().filter(|g| !g.ignored).count();
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.partial_cmp(&preds[a].score).unwrap());
    let table: Vec<Vec<f64>> = order
        .iter()
        .map(|&p| gts.iter().map(|g| if g.frame == preds[p].frame { bev_iou(&preds[p].bx, &g.bx).unwrap() } else { -1.0 }).collect())
        .collect();
    let mut used = vec![false; gts.len()];
    // +1 true positive, -1 false positive, 0 ignored match
    let mut outcome = Vec::new();
    for row in &table {
        let mut best: Option<usize> = None;
        for (gi, &v) in row.iter().enumerate() {
            if !used[gi] && v >= thr && best.map_or(true, |b| v > row[b]) {
                best = Some(gi);
            }
        }
        outcome.push(match best {
            Some(gi) => {
                used[gi] = true;
                if gts[gi].ignored { 0 } else { 1 }
            }
            None => -1,
        });
    }
    let mut total = 0.0;
    for k in 1..=RECALL_POINTS {
        let r = k as f64 / RECALL_POINTS as f64;
        let mut best: f64 = 0.0;
        for end in 1..=outcome.len() {
            let tp = outcome[..end].iter().filter(|&&o| o == 1).count() as f64;
            let fp = outcome[..end].iter().filter(|&&o| o == -1).count() as f64;
            if tp + fp == 0.0 {
                continue;
            }
            if tp / n_gt as f64 >= r - 1e-12 {
                best = best.max(tp / (tp + fp));
            }
        }
        total += best;
    }
    100.0 * total / RECALL_POINTS as f64
}

fn instance(rng: &mut ChaCha8Rng) -> (Vec<FrameBox>, Vec<FrameBox>) {
    let frames = rng.gen_range(1..5);
    let mut gts = Vec::new();
    let mut preds = Vec::new();
    for frame in 0..frames {
        for k in 0..rng.gen_range(0..6) {
            let bx = RotatedBox { x: 6.0 * k as f64, ..random_box(rng) };
            gts.push(FrameBox { frame, score: 1.0, bx, ignored: rng.gen_bool(0.15) });
            for _ in 0..rng.gen_range(0..3) {
                let j = RotatedBox { x: bx.x + rng.gen_range(-0.6..0.6), z: bx.z + rng.gen_range(-0.6..0.6), ry: bx.ry + rng.gen_range(-0.3..0.3), ..bx };
                preds.push(FrameBox { frame, score: rng.gen_range(0..50) as f64 / 50.0, bx: j, ignored: false });
            }
        }
        for _ in 0..rng.gen_range(0..4) {
            let bx = RotatedBox { x: rng.gen_range(-3.0..30.0), ..random_box(rng) };
            preds.push(FrameBox { frame, score: rng.gen_range(0..50) as f64 / 50.0, bx, ignored: false });
        }
    }
    (preds, gts)
}

#[test]
fn average_precision_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 100 {
        let (preds, gts) = instance(&mut rng);
        let res = average_precision(&preds, &gts, 0.5, IouMode::Bev).unwrap();
        if gts.iter().all(|g| g.ignored) {
            assert!(res.empty_ground_truth && res.ap == 0.0);
            continue;
        }
        let want = brute_force_ap(&preds, &gts, 0.5);
        assert!((res.ap - want).abs() <= 1e-9, "instance {checked}: {} vs {want}", res.ap);
        checked += 1;
    }
}

#[test]
fn perfect_predictions_score_100() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gts: Vec<FrameBox> = (0..7)
        .map(|k| FrameBox { frame: k % 2, score: 1.0, bx: RotatedBox { x: 8.0 * k as f64, ..random_box(&mut rng) }, ignored: false })
        .collect();
    let preds: Vec<FrameBox> = gts.iter().map(|g| FrameBox { score: 0.9, ..*g }).collect();
    let res = average_precision(&preds, &gts, 0.7, IouMode::ThreeD).unwrap();
    assert_eq!((res.ap, res.true_positives, res.false_positives), (100.0, 7, 0));
}

#[test]
fn half_shifted_unit_squares() {
    let a = RotatedBox { x: 0.0, z: 0.0, l: 1.0, w: 1.0, ry: 0.0, y: 0.0, h: 1.0 };
    let b = RotatedBox { x: 0.5, ..a };
    assert!((bev_iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn a_top_scoring_true_positive_never_lowers_ap(seed in 0u64..1_000_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut preds, mut gts) = instance(&mut rng);
        let bx = RotatedBox { x: 500.0, ..random_box(&mut rng) };
        let frame = 0;
        let before = average_precision(&preds, &gts, 0.5, IouMode::Bev).unwrap();
        gts.push(FrameBox { frame, score: 1.0, bx, ignored: false });
        let without = average_precision(&preds, &gts, 0.5, IouMode::Bev).unwrap();
        preds.push(FrameBox { frame, score: 2.0, bx, ignored: false });
        let with = average_precision(&preds, &gts, 0.5, IouMode::Bev).unwrap();
        prop_assert!(with.ap >= without.ap - 1e-12);
        prop_assert!(before.empty_ground_truth || with.ap >= 0.0);
    }
}
