use std::f64::consts::TAU;

use ts3d_core::synth::{flip_frame, photometric_jitter, render_scene, sample_scene, synth_scene, Jitter, SceneParams};

#[test]
fn object_pixels_carry_focal_baseline_over_depth() {
    let params = SceneParams::desk();
    let scene = sample_scene(3, &params);
    let r = render_scene(&scene, &params);
    let f = params.focal * params.baseline;
    let mut seen = 0;
    for (px, &id) in r.object_ids.iter().enumerate() {
        if id < 0 {
            continue;
        }
        let o = &scene.objects[id as usize];
        // Visible faces lie within half a diagonal of the centre depth.
        let reach = 0.5 * o.dimensions[1].hypot(o.dimensions[2]);
        let d = r.disparity[px] as f64;
        assert!(d >= f / (o.location[2] + reach) - 1e-3 && d <= f / (o.location[2] - reach) + 1e-3);
        seen += 1;
    }
    assert!(seen > 0);
    // Ground rows below the horizon: z = f·H/(v − cy), so d = b·(v − cy)/H.
    let (w, cy) = (params.width, params.height as f64 / 2.0);
    let v = params.height - 1;
    for u in 0..w {
        let px = v * w + u;
        if r.object_ids[px] < 0 {
            let want = params.baseline * (v as f64 - cy) / params.camera_height;
            assert!((r.disparity[px] as f64 - want).abs() < 1e-4);
        }
    }
}

#[test]
fn rendering_is_deterministic() {
    let params = SceneParams::desk();
    assert_eq!(synth_scene(9, &params), synth_scene(9, &params));
    assert_ne!(synth_scene(9, &params).left, synth_scene(10, &params).left);
}

#[test]
fn flipping_twice_restores_the_frame() {
    let params = SceneParams::desk();
    for seed in 0..4 {
        let frame = synth_scene(seed, &params);
        let back = flip_frame(&flip_frame(&frame));
        assert_eq!(back.left, frame.left);
        assert_eq!(back.right, frame.right);
        assert_eq!(back.labels.len(), frame.labels.len());
        for (a, b) in back.labels.iter().zip(&frame.labels) {
            for k in 0..3 {
                assert!((a.location[k] - b.location[k]).abs() < 1e-9);
            }
            let d = (a.rotation_y - b.rotation_y).abs();
            assert!(d < 1e-9 || (d - TAU).abs() < 1e-9, "yaw changed by {d}");
            for k in 0..4 {
                assert!((a.bbox[k] - b.bbox[k]).abs() < 1e-6);
            }
        }
        assert!((back.calib.p2[0][2] - frame.calib.p2[0][2]).abs() < 1e-12);
    }
}

#[test]
fn flipped_objects_still_project_into_their_boxes() {
    let params = SceneParams::desk();
    let frame = flip_frame(&synth_scene(5, &params));
    for l in &frame.labels {
        let [u, v] = frame.calib.project(l.center()).unwrap();
        assert!(u >= l.bbox[0] - 1.0 && u <= l.bbox[2] + 1.0 && v >= l.bbox[1] - 1.0 && v <= l.bbox[3] + 1.0);
    }
}

#[test]
fn empty_scene_renders_background_only() {
    let params = SceneParams { min_objects: 0, max_objects: 0, ..SceneParams::desk() };
    let r = render_scene(&sample_scene(1, &params), &params);
    assert!(r.frame.labels.is_empty());
    assert!(r.object_ids.iter().all(|&i| i < 0));
    assert!(r.frame.left.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn identity_jitter_is_a_no_op() {
    let frame = synth_scene(2, &SceneParams::desk());
    let out = photometric_jitter(&frame, &Jitter::IDENTITY);
    for (a, b) in out.left.data().iter().zip(frame.left.data()) {
        assert!((a - b).abs() < 1e-5);
    }
    assert_eq!(out.labels, frame.labels);
}
