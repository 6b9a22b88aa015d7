use alloc::vec;
use alloc::vec::Vec;

use super::augment::project_box_2d;
use super::noise::texture;
use super::{Scene, SceneObject, SceneParams, StereoFrame};
use crate::label::{alpha_from_ry, Projection, ObjectLabel, CLASS_NAMES};
use crate::Tensor;

/// A rendered frame with the exact left-view disparity in pixels.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub frame: StereoFrame,
    pub disparity: Vec<f32>,
    /// Index of the object seen at each left pixel, `-1` for background.
    pub object_ids: Vec<i32>,
}

#[derive(Clone, Copy)]
enum Surface {
    Ground,
    Wall,
    Object { index: usize, axis: usize },
}

struct Hit {
    t: f64,
    point: [f64; 3],
    surface: Surface,
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Local axes of an object: length, height and width directions.
fn axes(o: &SceneObject) -> [[f64; 3]; 3] {
    let (c, s) = (libm::cos(o.rotation_y), libm::sin(o.rotation_y));
    [[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]]
}

fn local(o: &SceneObject, p: [f64; 3]) -> [f64; 3] {
    let [h, _, _] = o.dimensions;
    let c = [o.location[0], o.location[1] - h / 2.0, o.location[2]];
    let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
    axes(o).map(|a| dot(d, a))
}

/// Entry distance and face axis of a ray against an object's box.
fn intersect_box(o: &SceneObject, origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, usize)> {
    let [h, w, l] = o.dimensions;
    let half = [l / 2.0, h / 2.0, w / 2.0];
    let lo = local(o, origin);
    let ld = axes(o).map(|a| dot(dir, a));
    let (mut t_near, mut t_far, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
    for k in 0..3 {
        if libm::fabs(ld[k]) < 1e-12 {
            if libm::fabs(lo[k]) > half[k] {
                return None;
            }
            continue;
        }
        let (t1, t2) = ((-half[k] - lo[k]) / ld[k], (half[k] - lo[k]) / ld[k]);
        let (a, b) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        if a > t_near {
            t_near = a;
            axis = k;
        }
        t_far = t_far.min(b);
    }
    (t_near <= t_far && t_near > 1e-9).then_some((t_near, axis))
}

fn camera_origin(p: &Projection) -> [f64; 3] {
    [-p[0][3] / p[0][0], 0.0, 0.0]
}

fn trace(scene: &Scene, params: &SceneParams, origin: [f64; 3], dir: [f64; 3], mut each_object: impl FnMut(usize)) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    let mut offer = |t: f64, surface: Surface| {
        if t > 1e-9 && best.as_ref().map_or(true, |b| t < b.t) {
            let point = [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]];
            best = Some(Hit { t, point, surface });
        }
    };
    if dir[1] > 1e-12 {
        offer((params.camera_height - origin[1]) / dir[1], Surface::Ground);
    }
    if dir[2] > 1e-12 {
        offer((params.wall_depth - origin[2]) / dir[2], Surface::Wall);
    }
    for (index, o) in scene.objects.iter().enumerate() {
        if let Some((t, axis)) = intersect_box(o, origin, dir) {
            each_object(index);
            offer(t, Surface::Object { index, axis });
        }
    }
    best
}

fn shade(scene: &Scene, params: &SceneParams, hit: &Hit) -> [f64; 3] {
    let p = hit.point;
    match hit.surface {
        Surface::Ground => {
            let n = texture(scene.ground_seed, p[0] / 0.15, p[2] / 0.15);
            let g = 0.25 + 0.5 * n;
            [g * 1.05, g, g * 0.9]
        }
        Surface::Wall => {
            let n = texture(scene.wall_seed, p[0] / 1.2, p[1] / 1.2);
            let g = 0.45 + 0.4 * n;
            [g * 0.9, g * 0.95, g * 1.05]
        }
        Surface::Object { index, axis } => {
            let o = &scene.objects[index];
            let q = local(o, p);
            let s = params.texture_scale;
            let (a, b) = match axis {
                0 => (q[2], q[1]),
                1 => (q[0], q[2]),
                _ => (q[0], q[1]),
            };
            let seed = o.texture_seed.wrapping_add(axis as u32 * 7919);
            let n = texture(seed, a / s, b / s);
            let light = [0.8, 1.0, 0.9][axis] * (0.45 + 0.55 * n);
            o.color.map(|c| c * light)
        }
    }
}

/// Ray-casts both views at pixel centres. Labels are the objects that are
/// at least partly visible in the left view; occlusion levels come from
/// the visible share of each object's unoccluded footprint.
pub fn render_scene(scene: &Scene, params: &SceneParams) -> Rendered {
    let (w, h) = (params.width, params.height);
    let calib = scene.calib;
    let n_obj = scene.objects.len();
    let mut visible = vec![0usize; n_obj];
    let mut footprint = vec![0usize; n_obj];
    let mut disparity = vec![0.0f32; w * h];
    let mut object_ids = vec![-1i32; w * h];
    let mut views = [vec![0.0f32; w * h * 3], vec![0.0f32; w * h * 3]];
    for (view, p) in [calib.p2, calib.p3].iter().enumerate() {
        let origin = camera_origin(p);
        let (f, cx, cy) = (p[0][0], p[0][2], p[1][2]);
        for v in 0..h {
            for u in 0..w {
                let dir = [(u as f64 - cx) / f, (v as f64 - cy) / f, 1.0];
                let hit = trace(scene, params, origin, dir, |i| {
                    if view == 0 {
                        footprint[i] += 1;
                    }
                });
                let px = v * w + u;
                let color = match &hit {
                    Some(hit) => {
                        if view == 0 {
                            disparity[px] = calib.disparity_at(hit.point[2]) as f32;
                            if let Surface::Object { index, .. } = hit.surface {
                                visible[index] += 1;
                                object_ids[px] = index as i32;
                            }
                        }
                        shade(scene, params, hit)
                    }
                    None => [0.5, 0.5, 0.5],
                };
                for k in 0..3 {
                    views[view][px * 3 + k] = color[k].clamp(0.0, 1.0) as f32;
                }
            }
        }
    }
    let mut labels = Vec::new();
    for (i, o) in scene.objects.iter().enumerate() {
        if visible[i] == 0 {
            continue;
        }
        let mut label = ObjectLabel {
            kind: CLASS_NAMES[o.class].into(),
            truncated: 0.0,
            occluded: 0,
            alpha: alpha_from_ry(o.rotation_y, o.location[0], o.location[2]),
            bbox: [0.0; 4],
            dimensions: o.dimensions,
            location: o.location,
            rotation_y: o.rotation_y,
            score: None,
        };
        let Some((bbox, truncated)) = project_box_2d(&label, &calib, w, h) else { continue };
        let share = visible[i] as f64 / footprint[i].max(1) as f64;
        label.bbox = bbox;
        label.truncated = truncated;
        label.occluded = if share >= 0.8 {
            0
        } else if share >= 0.4 {
            1
        } else {
            2
        };
        labels.push(label);
    }
    let [left, right] = views;
    let frame = StereoFrame {
        left: Tensor::new(&[h, w, 3], left).expect("image extents are positive"),
        right: Tensor::new(&[h, w, 3], right).expect("image extents are positive"),
        calib,
        labels,
    };
    Rendered { frame, disparity, object_ids }
}
