use proptest::prelude::*;
use ts3d_core::disphead::{block_match, laplace_target, softargmax, stereo_focal_loss, BlockMatchParams, DisparityMap};
use ts3d_core::synth::{render_scene, sample_scene, SceneParams};
use ts3d_core::{Graph, Tensor};

#[test]
fn softargmax_of_known_logits() {
    let mut g = Graph::new();
    let l = g.leaf(Tensor::new(&[2, 3], vec![0.0, 0.0, 0.0, 0.0, 0.0, 2f64.ln()]).unwrap());
    let d = softargmax(&mut g, l).unwrap();
    let v = g.value(d).data();
    assert!((v[0] - 1.0).abs() < 1e-12);
    // p = (1/4, 1/4, 1/2)
    assert!((v[1] - 1.25).abs() < 1e-12);
}

proptest! {
    #[test]
    fn softargmax_stays_within_bin_range(logits in prop::collection::vec(-30.0f64..30.0, 1..40)) {
        let n = logits.len();
        let mut g = Graph::new();
        let l = g.leaf(Tensor::new(&[n], logits).unwrap());
        let d = softargmax(&mut g, l).unwrap();
        let v = g.value(d).item();
        prop_assert!(v >= -1e-12 && v <= (n - 1) as f64 + 1e-12);
    }

    #[test]
    fn laplace_target_is_normalised(d_gt in 0.0f64..95.0, sigma in 0.1f64..4.0) {
        let p = laplace_target(d_gt, 96, sigma);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let peak = (0..96).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        prop_assert!((peak as f64 - d_gt).abs() <= 0.5 + 1e-9);
    }
}

#[test]
fn laplace_target_golden_at_half_sigma() {
    let p = laplace_target(2.0, 5, 0.5);
    let e2 = (-2.0f64).exp();
    let e4 = (-4.0f64).exp();
    let z = 1.0 + 2.0 * e2 + 2.0 * e4;
    let want = [e4 / z, e2 / z, 1.0 / z, e2 / z, e4 / z];
    for (a, b) in p.iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
}

#[test]
fn focal_loss_is_cross_entropy_against_laplace_target() {
    let logits = vec![0.3, -1.0, 2.0, 0.5, 0.0, 0.0, 0.0, 0.0];
    let mut g = Graph::new();
    let l = g.leaf(Tensor::new(&[1, 2, 4], logits.clone()).unwrap());
    let sf = stereo_focal_loss(&mut g, l, &[2.0, 1.0], &[true, false], 0.5).unwrap();
    assert_eq!(sf.valid_pixels, 1);
    let p = laplace_target(2.0, 4, 0.5);
    let lse = logits[..4].iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
    let want: f64 = (0..4).map(|k| -p[k] * (logits[k] - lse)).sum();
    assert!((g.value(sf.loss).item() - want).abs() < 1e-12);
    let none = stereo_focal_loss(&mut g, l, &[2.0, 1.0], &[false, false], 0.5).unwrap();
    assert_eq!((g.value(none.loss).item(), none.valid_pixels), (0.0, 0));
}

#[test]
fn block_matching_recovers_rendered_disparity() {
    let params = SceneParams::desk();
    let mut errs = Vec::new();
    for seed in 0..3 {
        let r = render_scene(&sample_scene(seed, &params), &params);
        let map = block_match(&r.frame.left, &r.frame.right, &BlockMatchParams::new(48)).unwrap();
        assert!(map.valid_fraction() > 0.3, "seed {seed}: valid {:.2}", map.valid_fraction());
        for i in 0..map.disparity.len() {
            if map.valid[i] && r.disparity[i] < 48.0 {
                errs.push((map.disparity[i] - r.disparity[i]).abs() as f64);
            }
        }
    }
    let mae = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!(mae < 1.5, "MAE {mae:.3} px over {} pixels", errs.len());
}

#[test]
fn downsample_averages_half_valid_cells() {
    let map = DisparityMap {
        width: 4,
        height: 2,
        disparity: vec![4.0, 8.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0],
        valid: vec![true, true, false, true, false, false, false, false],
    };
    let d = map.downsample(2);
    assert_eq!((d.width, d.height), (2, 1));
    assert_eq!(d.valid, vec![true, false]);
    assert_eq!(d.disparity[0], 3.0);
}
