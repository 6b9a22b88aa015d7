use alloc::vec::Vec;

use core::f64::consts::PI;

use rand::Rng;

use super::StereoFrame;
use crate::label::{alpha_from_ry, wrap_angle, Calibration, ObjectLabel};
use crate::Tensor;

/// Image-clipped 2D box of a label's projected 3D corners and the fraction
/// of the unclipped box that falls outside the image. `None` when the box
/// is behind the camera or entirely out of frame.
pub fn project_box_2d(label: &ObjectLabel, calib: &Calibration, width: usize, height: usize) -> Option<([f64; 4], f64)> {
    let [h, w, l] = label.dimensions;
    let (c, s) = (libm::cos(label.rotation_y), libm::sin(label.rotation_y));
    let [x0, y0, z0] = label.location;
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    let mut any = false;
    for (dl, dw) in [(0.5, 0.5), (0.5, -0.5), (-0.5, 0.5), (-0.5, -0.5)] {
        for dy in [0.0, -h] {
            let p = [x0 + c * dl * l + s * dw * w, y0 + dy, z0 - s * dl * l + c * dw * w];
            if p[2] < 0.1 {
                continue;
            }
            if let Some([u, v]) = calib.project(p) {
                b = [b[0].min(u), b[1].min(v), b[2].max(u), b[3].max(v)];
                any = true;
            }
        }
    }
    if !any {
        return None;
    }
    let (wm, hm) = ((width - 1) as f64, (height - 1) as f64);
    let clipped = [b[0].max(0.0), b[1].max(0.0), b[2].min(wm), b[3].min(hm)];
    if clipped[2] <= clipped[0] || clipped[3] <= clipped[1] {
        return None;
    }
    let area = |r: &[f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    let full = area(&b);
    let truncated = if full > 0.0 { (1.0 - area(&clipped) / full).clamp(0.0, 1.0) } else { 0.0 };
    Some((clipped, truncated))
}

fn mirror(img: &Tensor<f32>) -> Tensor<f32> {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let src = img.data();
    Tensor::from_fn(&[h, w, 3], |i| {
        let (px, k) = (i / 3, i % 3);
        let (y, x) = (px / w, px % w);
        src[(y * w + (w - 1 - x)) * 3 + k]
    })
}

/// Horizontal flip of a stereo pair: both images are mirrored and the views
/// swap roles, so the mirrored right image becomes the new left image and
/// disparities stay positive. Objects move to `x' = b − x` with yaw
/// `π − ry`, and boxes are re-projected.
pub fn flip_frame(frame: &StereoFrame) -> StereoFrame {
    let (h, w) = (frame.left.shape()[0], frame.left.shape()[1]);
    let calib = &frame.calib;
    let b = calib.baseline();
    let new_calib = Calibration::stereo(calib.focal(), (w - 1) as f64 - calib.p2[0][2], calib.p2[1][2], b);
    let labels = frame
        .labels
        .iter()
        .map(|l| {
            let mut out = l.clone();
            let wm = (w - 1) as f64;
            out.bbox = [wm - l.bbox[2], l.bbox[1], wm - l.bbox[0], l.bbox[3]];
            if l.is_dont_care() {
                return out;
            }
            out.location[0] = b - l.location[0];
            out.rotation_y = wrap_angle(PI - l.rotation_y);
            out.alpha = alpha_from_ry(out.rotation_y, out.location[0], out.location[2]);
            if let Some((bbox, truncated)) = project_box_2d(&out, &new_calib, w, h) {
                out.bbox = bbox;
                out.truncated = truncated;
            }
            out
        })
        .collect::<Vec<_>>();
    StereoFrame { left: mirror(&frame.right), right: mirror(&frame.left), calib: new_calib, labels }
}

/// Colour distortion parameters shared by both views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    /// Hue rotation in radians.
    pub hue: f32,
}

impl Jitter {
    pub const IDENTITY: Jitter = Jitter { brightness: 0.0, contrast: 1.0, saturation: 1.0, hue: 0.0 };

    pub fn sample(rng: &mut impl Rng) -> Self {
        Jitter {
            brightness: rng.gen_range(-0.08..=0.08),
            contrast: rng.gen_range(0.8..=1.2),
            saturation: rng.gen_range(0.8..=1.2),
            hue: rng.gen_range(-0.15..=0.15),
        }
    }

    fn apply(&self, img: &mut Tensor<f32>) {
        let (c, s) = (libm::cosf(self.hue), libm::sinf(self.hue));
        for p in img.data_mut().chunks_exact_mut(3) {
            // YIQ: luma untouched by hue rotation and saturation scaling.
            let y = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
            let i = 0.596 * p[0] - 0.274 * p[1] - 0.322 * p[2];
            let q = 0.211 * p[0] - 0.523 * p[1] + 0.312 * p[2];
            let (i, q) = ((c * i - s * q) * self.saturation, (s * i + c * q) * self.saturation);
            let y = (y - 0.5) * self.contrast + 0.5 + self.brightness;
            // Exact inverse of the forward matrix so the identity jitter is lossless.
            let rgb = [
                y + 0.956_170_7 * i + 0.621_432_6 * q,
                y - 0.272_688_6 * i - 0.646_813_2 * q,
                y - 1.103_744_1 * i + 1.700_623_1 * q,
            ];
            for (d, v) in p.iter_mut().zip(rgb) {
                *d = v.clamp(0.0, 1.0);
            }
        }
    }
}

/// Applies the same colour distortion to both views; labels are untouched.
pub fn photometric_jitter(frame: &StereoFrame, jitter: &Jitter) -> StereoFrame {
    let mut out = frame.clone();
    jitter.apply(&mut out.left);
    jitter.apply(&mut out.right);
    out
}
