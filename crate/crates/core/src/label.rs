//! Object labels and rectified stereo calibration in KITTI conventions:
//! camera `x` right, `y` down, `z` forward, box location at the bottom
//! centre.

use alloc::format;
use alloc::string::String;

use crate::{Error, Result};

/// Foreground classes in head-channel order.
pub const CLASS_NAMES: [&str; 2] = ["Car", "Pedestrian"];

pub fn class_index(name: &str) -> Option<usize> {
    CLASS_NAMES.iter().position(|&n| n == name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectLabel {
    pub kind: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    /// `[left, top, right, bottom]` in pixels.
    pub bbox: [f64; 4],
    /// `[h, w, l]` in metres.
    pub dimensions: [f64; 3],
    /// Bottom centre `[x, y, z]` in metres.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl ObjectLabel {
    pub fn class(&self) -> Option<usize> {
        class_index(&self.kind)
    }

    pub fn is_dont_care(&self) -> bool {
        self.kind == "DontCare"
    }

    /// Geometric centre of the 3D box.
    pub fn center(&self) -> [f64; 3] {
        let [x, y, z] = self.location;
        [x, y - self.dimensions[0] / 2.0, z]
    }

    pub fn bbox_height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }
}

/// Observation angle from the yaw and the ray to the box.
pub fn alpha_from_ry(ry: f64, x: f64, z: f64) -> f64 {
    wrap_angle(ry - libm::atan2(x, z))
}

pub fn ry_from_alpha(alpha: f64, x: f64, z: f64) -> f64 {
    wrap_angle(alpha + libm::atan2(x, z))
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use core::f64::consts::PI;
    let mut a = libm::fmod(a, 2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

pub type Projection = [[f64; 4]; 3];

/// Left (`P2`) and right (`P3`) projection matrices of a rectified pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub p2: Projection,
    pub p3: Projection,
}

impl Calibration {
    /// Ideal rectified pair with focal length `f` pixels, principal point
    /// `(cx, cy)` and baseline `b` metres, the right camera at `x = b`.
    pub fn stereo(f: f64, cx: f64, cy: f64, b: f64) -> Self {
        let p2 = [[f, 0.0, cx, 0.0], [0.0, f, cy, 0.0], [0.0, 0.0, 1.0, 0.0]];
        let mut p3 = p2;
        p3[0][3] = -f * b;
        Calibration { p2, p3 }
    }

    pub fn focal(&self) -> f64 {
        self.p2[0][0]
    }

    /// Baseline in metres recovered from the horizontal translation terms.
    pub fn baseline(&self) -> f64 {
        (self.p2[0][3] - self.p3[0][3]) / self.p3[0][0]
    }

    /// Disparity of a point at depth `z`.
    pub fn disparity_at(&self, z: f64) -> f64 {
        self.focal() * self.baseline() / z
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.focal();
        if !(f > 0.0) || self.p3[0][0] != f || !(self.baseline() > 0.0) {
            return Err(Error::Calibration(format!(
                "expected a rectified pair with positive focal length and baseline, got f={f}, b={}",
                self.baseline()
            )));
        }
        Ok(())
    }

    fn project_with(p: &Projection, x: [f64; 3]) -> Option<[f64; 2]> {
        let h = [x[0], x[1], x[2], 1.0];
        let row = |r: &[f64; 4]| r.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
        let s = row(&p[2]);
        (s > 1e-9).then(|| [row(&p[0]) / s, row(&p[1]) / s])
    }

    /// Left-image pixel of a camera-frame point in front of the camera.
    pub fn project(&self, x: [f64; 3]) -> Option<[f64; 2]> {
        Self::project_with(&self.p2, x)
    }

    pub fn project_right(&self, x: [f64; 3]) -> Option<[f64; 2]> {
        Self::project_with(&self.p3, x)
    }

    /// Camera-frame point at depth `z` that projects to left pixel `(u, v)`.
    pub fn back_project(&self, u: f64, v: f64, z: f64) -> Result<[f64; 3]> {
        let p = &self.p2;
        // (r0 − u·r2)·X = 0 and (r1 − v·r2)·X = 0, solved for x and y.
        let a = [p[0][0] - u * p[2][0], p[0][1] - u * p[2][1]];
        let b = [p[1][0] - v * p[2][0], p[1][1] - v * p[2][1]];
        let ra = -((p[0][2] - u * p[2][2]) * z + p[0][3] - u * p[2][3]);
        let rb = -((p[1][2] - v * p[2][2]) * z + p[1][3] - v * p[2][3]);
        let det = a[0] * b[1] - a[1] * b[0];
        if libm::fabs(det) < 1e-12 || !det.is_finite() {
            return Err(Error::Calibration(String::from("left projection matrix is not invertible at this depth")));
        }
        let x = (ra * b[1] - a[1] * rb) / det;
        let y = (a[0] * rb - ra * b[0]) / det;
        Ok([x, y, z])
    }
}
