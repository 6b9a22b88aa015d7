use alloc::vec::Vec;

use core::f64::consts::PI;

use super::anchors::{Anchor, AnchorPriors};
use crate::label::{alpha_from_ry, ry_from_alpha, wrap_angle, Calibration, ObjectLabel};
use crate::{Error, Result};

/// `(δu2d, δv2d, δw2d, δh2d, δu3d, δv3d, δz, δw, δh, δl, sin2α, cos2α, c_α)`.
pub const REG_DIMS: usize = 13;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection3D {
    pub class: usize,
    pub score: f64,
    /// `[left, top, right, bottom]` in pixels.
    pub bbox: [f64; 4],
    /// `[h, w, l]` in metres.
    pub dimensions: [f64; 3],
    /// Bottom centre `[x, y, z]`.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub alpha: f64,
}

impl Detection3D {
    pub fn to_label(&self, class_name: &str) -> ObjectLabel {
        ObjectLabel {
            kind: class_name.into(),
            truncated: 0.0,
            occluded: 0,
            alpha: self.alpha,
            bbox: self.bbox,
            dimensions: self.dimensions,
            location: self.location,
            rotation_y: self.rotation_y,
            score: Some(self.score),
        }
    }
}

fn ln_ratio(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Degenerate(alloc::format!("non-positive extent {a} against prior {b}")));
    }
    Ok(libm::log(a / b))
}

/// Regression target of `label` (class `class`) against `anchor`.
pub fn encode_box(anchor: &Anchor, label: &ObjectLabel, class: usize, priors: &AnchorPriors, calib: &Calibration) -> Result<[f64; 13]> {
    let [ua, va] = anchor.center;
    let [wa, ha] = anchor.size;
    let b = label.bbox;
    let (u2, v2, w2, h2) = ((b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0, b[2] - b[0], b[3] - b[1]);
    let c = label.center();
    let [u3, v3] = calib
        .project(c)
        .ok_or_else(|| Error::Degenerate(alloc::format!("object centre {c:?} is behind the camera")))?;
    let zp = priors.shape_z[anchor.shape];
    let sp = priors.class_size[class];
    let [h, w, l] = label.dimensions;
    let alpha = alpha_from_ry(label.rotation_y, c[0], c[2]);
    let branch = if alpha > -PI / 2.0 && alpha <= PI / 2.0 { 1.0 } else { 0.0 };
    Ok([
        (u2 - ua) / wa,
        (v2 - va) / ha,
        ln_ratio(w2, wa)?,
        ln_ratio(h2, ha)?,
        (u3 - ua) / wa,
        (v3 - va) / ha,
        ln_ratio(c[2], zp)?,
        ln_ratio(w, sp[1])?,
        ln_ratio(h, sp[0])?,
        ln_ratio(l, sp[2])?,
        libm::sin(2.0 * alpha),
        libm::cos(2.0 * alpha),
        branch,
    ])
}

/// Inverse of [`encode_box`]. `t[12]` is the probability that α lies in
/// `(−π/2, π/2]`; otherwise the decoded α is the opposite branch `α + π`.
pub fn decode_box(anchor: &Anchor, t: &[f64], class: usize, priors: &AnchorPriors, calib: &Calibration) -> Result<Detection3D> {
    if t.len() != REG_DIMS {
        return Err(Error::shape("decode_box", alloc::format!("expected {REG_DIMS} offsets, got {}", t.len())));
    }
    let [ua, va] = anchor.center;
    let [wa, ha] = anchor.size;
    let (u2, v2) = (ua + t[0] * wa, va + t[1] * ha);
    let (w2, h2) = (wa * libm::exp(t[2]), ha * libm::exp(t[3]));
    let (u3, v3) = (ua + t[4] * wa, va + t[5] * ha);
    let z = priors.shape_z[anchor.shape] * libm::exp(t[6]);
    let sp = priors.class_size[class];
    let (w, h, l) = (sp[1] * libm::exp(t[7]), sp[0] * libm::exp(t[8]), sp[2] * libm::exp(t[9]));
    let c = calib.back_project(u3, v3, z)?;
    let mut alpha = libm::atan2(t[10], t[11]) / 2.0;
    if t[12] <= 0.5 {
        alpha = wrap_angle(alpha + PI);
    }
    Ok(Detection3D {
        class,
        score: 1.0,
        bbox: [u2 - w2 / 2.0, v2 - h2 / 2.0, u2 + w2 / 2.0, v2 + h2 / 2.0],
        dimensions: [h, w, l],
        location: [c[0], c[1] + h / 2.0, c[2]],
        rotation_y: ry_from_alpha(alpha, c[0], c[2]),
        alpha,
    })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Decodes every anchor whose best foreground score reaches `min_score`.
/// `cls` is `[N·A, K+1]` logits (the last channel is background) and `reg`
/// is `[N·A, 13]`; the branch channel is a logit.
pub fn decode_predictions(
    cls: &[f64],
    reg: &[f64],
    anchors: &[Anchor],
    num_classes: usize,
    priors: &AnchorPriors,
    calib: &Calibration,
    min_score: f64,
) -> Result<Vec<Detection3D>> {
    let kc = num_classes + 1;
    let mut out = Vec::new();
    for (i, anchor) in anchors.iter().enumerate() {
        let row = &cls[i * kc..i * kc + num_classes];
        let (mut class, mut best) = (0, f64::NEG_INFINITY);
        for (k, &v) in row.iter().enumerate() {
            if v > best {
                class = k;
                best = v;
            }
        }
        let score = sigmoid(best);
        if score < min_score {
            continue;
        }
        let mut t = [0.0; REG_DIMS];
        t.copy_from_slice(&reg[i * REG_DIMS..(i + 1) * REG_DIMS]);
        t[12] = sigmoid(t[12]);
        let mut det = decode_box(anchor, &t, class, priors, calib)?;
        det.score = score;
        out.push(det);
    }
    Ok(out)
}
