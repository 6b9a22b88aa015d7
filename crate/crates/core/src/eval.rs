//! Rotated-box overlap and interpolated average precision.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::label::ObjectLabel;
use crate::{Error, Result};

/// Ground-plane footprint plus vertical extent of a 3D box. `y` is the
/// bottom face (camera `y` points down), the box spans `[y − h, y]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedBox {
    pub x: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub ry: f64,
    pub y: f64,
    pub h: f64,
}

impl RotatedBox {
    pub fn from_label(l: &ObjectLabel) -> Self {
        let [h, w, len] = l.dimensions;
        RotatedBox { x: l.location[0], z: l.location[2], l: len, w, ry: l.rotation_y, y: l.location[1], h }
    }

    /// Footprint corners `(x, z)`, counter-clockwise in the `x`-`z` plane.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (c, s) = (libm::cos(self.ry), libm::sin(self.ry));
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        let mut out = [[0.0; 2]; 4];
        for (o, p) in out.iter_mut().zip(local) {
            *o = [self.x + c * p[0] + s * p[1], self.z - s * p[0] + c * p[1]];
        }
        if signed_area(&out) < 0.0 {
            out.reverse();
        }
        out
    }

    pub fn footprint_area(&self) -> f64 {
        self.l * self.w
    }

    fn check(&self) -> Result<()> {
        if !(self.l > 0.0 && self.w > 0.0 && self.h > 0.0) {
            return Err(Error::Degenerate(format!("box extents l={}, w={}, h={} must be positive", self.l, self.w, self.h)));
        }
        Ok(())
    }
}

fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        a[0] * b[1] - a[1] * b[0]
    })
    .sum::<f64>()
        / 2.0
}

/// Clips `subject` by every edge of the convex counter-clockwise `clip`.
fn clip_polygon(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % n]);
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = core::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (sp, sq) = (side(p), side(q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    out
}

fn bev_intersection(a: &RotatedBox, b: &RotatedBox) -> f64 {
    let poly = clip_polygon(&a.corners(), &b.corners());
    if poly.len() < 3 {
        0.0
    } else {
        libm::fabs(signed_area(&poly))
    }
}

/// Bird's-eye-view IoU of two footprints.
pub fn bev_iou(a: &RotatedBox, b: &RotatedBox) -> Result<f64> {
    a.check()?;
    b.check()?;
    let inter = bev_intersection(a, b);
    Ok((inter / (a.footprint_area() + b.footprint_area() - inter)).clamp(0.0, 1.0))
}

/// Volume IoU: footprint intersection times vertical overlap over the union.
pub fn iou_3d(a: &RotatedBox, b: &RotatedBox) -> Result<f64> {
    a.check()?;
    b.check()?;
    let overlap = (a.y.min(b.y) - (a.y - a.h).max(b.y - b.h)).max(0.0);
    let inter = bev_intersection(a, b) * overlap;
    let union = a.footprint_area() * a.h + b.footprint_area() * b.h - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IouMode {
    Bev,
    ThreeD,
}

impl IouMode {
    pub fn iou(self, a: &RotatedBox, b: &RotatedBox) -> Result<f64> {
        match self {
            IouMode::Bev => bev_iou(a, b),
            IouMode::ThreeD => iou_3d(a, b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IouMode::Bev => "bev",
            IouMode::ThreeD => "3d",
        }
    }
}

/// A scored prediction or a ground truth in some frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameBox {
    pub frame: usize,
    pub score: f64,
    pub bx: RotatedBox,
    /// Ground truths excluded by the difficulty filter: matching one is
    /// neither a true nor a false positive.
    pub ignored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApResult {
    /// Percent in `[0, 100]`.
    pub ap: f64,
    /// Set when there was no ground truth to recall; `ap` is then 0.
    pub empty_ground_truth: bool,
    pub true_positives: usize,
    pub false_positives: usize,
}

pub const RECALL_POINTS: usize = 40;

/// Greedy score-descending matching followed by 40-point interpolated
/// precision at recalls `1/40, …, 1`.
pub fn average_precision(preds: &[FrameBox], gts: &[FrameBox], iou_threshold: f64, mode: IouMode) -> Result<ApResult> {
    let n_gt = gts.iter().filter(|g| !g.ignored).count();
    if n_gt == 0 {
        return Ok(ApResult { ap: 0.0, empty_ground_truth: true, true_positives: 0, false_positives: preds.len() });
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    let mut taken = vec![false; gts.len()];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(preds.len());
    for &pi in &order {
        let p = &preds[pi];
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if taken[gi] || g.frame != p.frame {
                continue;
            }
            let iou = mode.iou(&p.bx, &g.bx)?;
            if iou >= iou_threshold && best.map_or(true, |(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        match best {
            Some((gi, _)) => {
                taken[gi] = true;
                if gts[gi].ignored {
                    continue;
                }
                tp += 1;
            }
            None => fp += 1,
        }
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut sum = 0.0;
    for k in 1..=RECALL_POINTS {
        let r = k as f64 / RECALL_POINTS as f64;
        let p = curve.iter().filter(|(rc, _)| *rc >= r - 1e-12).map(|&(_, p)| p).fold(0.0, f64::max);
        sum += p;
    }
    Ok(ApResult { ap: 100.0 * sum / RECALL_POINTS as f64, empty_ground_truth: false, true_positives: tp, false_positives: fp })
}

/// Ground-truth gate of a difficulty bucket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Difficulty {
    pub min_height: f64,
    pub max_occlusion: i32,
    pub max_truncation: f64,
}

impl Difficulty {
    pub const EASY: Difficulty = Difficulty { min_height: 40.0, max_occlusion: 0, max_truncation: 0.15 };
    pub const MODERATE: Difficulty = Difficulty { min_height: 25.0, max_occlusion: 1, max_truncation: 0.3 };
    pub const HARD: Difficulty = Difficulty { min_height: 25.0, max_occlusion: 2, max_truncation: 0.5 };
    /// Accepts every labelled object.
    pub const ALL: Difficulty = Difficulty { min_height: 0.0, max_occlusion: i32::MAX, max_truncation: f64::INFINITY };

    pub fn accepts(&self, l: &ObjectLabel) -> bool {
        l.bbox_height() >= self.min_height && l.occluded <= self.max_occlusion && l.truncated <= self.max_truncation
    }
}

/// AP of one class over frames of `(predictions, ground truth)` labels.
pub fn evaluate_class(
    frames: &[(Vec<ObjectLabel>, Vec<ObjectLabel>)],
    class_name: &str,
    iou_threshold: f64,
    mode: IouMode,
    difficulty: &Difficulty,
) -> Result<ApResult> {
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for (frame, (p, g)) in frames.iter().enumerate() {
        for l in p.iter().filter(|l| l.kind == class_name) {
            preds.push(FrameBox { frame, score: l.score.unwrap_or(1.0), bx: RotatedBox::from_label(l), ignored: false });
        }
        for l in g.iter().filter(|l| l.kind == class_name) {
            gts.push(FrameBox { frame, score: 1.0, bx: RotatedBox::from_label(l), ignored: !difficulty.accepts(l) });
        }
    }
    average_precision(&preds, &gts, iou_threshold, mode)
}
