//! Synthetic rectified stereo scenes with exact labels.
//!
//! Objects are cuboids standing on a ground plane in front of a distant
//! wall. Surfaces carry value-noise textures defined on the surface itself,
//! so both views see the same texture at the correct disparity.

mod augment;
mod noise;
mod render;

pub use augment::{flip_frame, photometric_jitter, project_box_2d, Jitter};
pub use render::{render_scene, Rendered};

use alloc::vec::Vec;

use core::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::{bev_iou, RotatedBox};
use crate::label::{Calibration, ObjectLabel};
use crate::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub baseline: f64,
    /// Height of the camera above the ground plane in metres.
    pub camera_height: f64,
    pub min_depth: f64,
    pub max_depth: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Probability that an object is a pedestrian rather than a car.
    pub pedestrian_fraction: f64,
    /// Yaw drawn uniformly instead of from the four axis-aligned headings.
    pub free_yaw: bool,
    /// Texture lattice spacing on object faces, metres.
    pub texture_scale: f64,
    pub wall_depth: f64,
}

impl SceneParams {
    /// 256×128 images, f = 200 px, b = 0.3 m, objects at 4–30 m.
    pub fn desk() -> Self {
        SceneParams {
            width: 256,
            height: 128,
            focal: 200.0,
            baseline: 0.3,
            camera_height: 1.65,
            min_depth: 4.0,
            max_depth: 30.0,
            min_objects: 2,
            max_objects: 4,
            pedestrian_fraction: 0.25,
            free_yaw: false,
            texture_scale: 0.12,
            wall_depth: 80.0,
        }
    }

    pub fn calibration(&self) -> Calibration {
        Calibration::stereo(self.focal, self.width as f64 / 2.0, self.height as f64 / 2.0, self.baseline)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneObject {
    pub class: usize,
    /// `[h, w, l]`.
    pub dimensions: [f64; 3],
    /// Bottom centre.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub color: [f64; 3],
    pub texture_seed: u32,
}

impl SceneObject {
    pub fn footprint(&self) -> RotatedBox {
        let [h, w, l] = self.dimensions;
        RotatedBox { x: self.location[0], z: self.location[2], l, w, ry: self.rotation_y, y: self.location[1], h }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub calib: Calibration,
    pub objects: Vec<SceneObject>,
    pub ground_seed: u32,
    pub wall_seed: u32,
}

/// Two rectified views in `[0, 1]`, their calibration and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoFrame {
    pub left: Tensor<f32>,
    pub right: Tensor<f32>,
    pub calib: Calibration,
    pub labels: Vec<ObjectLabel>,
}

const CAR: ([f64; 3], [f64; 3]) = ([1.52, 1.62, 3.9], [0.08, 0.08, 0.3]);
const PEDESTRIAN: ([f64; 3], [f64; 3]) = ([1.75, 0.62, 0.82], [0.08, 0.05, 0.08]);

/// Draws object classes, sizes, poses and textures. Objects whose
/// footprints would touch are redrawn a bounded number of times and then
/// skipped.
pub fn sample_scene(seed: u64, params: &SceneParams) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let calib = params.calibration();
    let count = rng.gen_range(params.min_objects..=params.max_objects.max(params.min_objects));
    let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
    for _ in 0..count {
        for _attempt in 0..32 {
            let class = usize::from(rng.gen_bool(params.pedestrian_fraction.clamp(0.0, 1.0)));
            let (mean, spread) = if class == 0 { CAR } else { PEDESTRIAN };
            let dimensions = [0, 1, 2].map(|k| mean[k] + spread[k] * rng.gen_range(-1.0..=1.0));
            let z = rng.gen_range(params.min_depth..=params.max_depth);
            let u = rng.gen_range(0.08..=0.92) * params.width as f64;
            let x = (u - calib.p2[0][2]) * z / params.focal;
            let rotation_y = if params.free_yaw {
                rng.gen_range(-core::f64::consts::PI..core::f64::consts::PI)
            } else {
                [0.0, FRAC_PI_2, core::f64::consts::PI, -FRAC_PI_2][rng.gen_range(0..4)]
            };
            let color = [rng.gen_range(0.15..0.95), rng.gen_range(0.15..0.95), rng.gen_range(0.15..0.95)];
            let obj = SceneObject {
                class,
                dimensions,
                location: [x, params.camera_height, z],
                rotation_y,
                color,
                texture_seed: rng.gen(),
            };
            let mut grown = obj.footprint();
            grown.l += 0.6;
            grown.w += 0.6;
            let clear = objects.iter().all(|o| bev_iou(&grown, &o.footprint()).map_or(false, |v| v == 0.0));
            if clear {
                objects.push(obj);
                break;
            }
        }
    }
    Scene { calib, objects, ground_seed: rng.gen(), wall_seed: rng.gen() }
}

/// Samples and renders one frame.
pub fn synth_scene(seed: u64, params: &SceneParams) -> StereoFrame {
    render_scene(&sample_scene(seed, params), params).frame
}
