use alloc::vec;
use alloc::vec::Vec;

use crate::config::LossConfig;
use crate::label::ObjectLabel;

/// 2D anchor extent in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorShape {
    pub w: f64,
    pub h: f64,
}

/// Every `(scale, ratio)` pair: height `scale`, width `scale·ratio`.
pub fn anchor_shapes(scales: &[f64], ratios: &[f64]) -> Vec<AnchorShape> {
    scales.iter().flat_map(|&s| ratios.iter().map(move |&r| AnchorShape { w: s * r, h: s })).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    /// Grid column and row.
    pub cell: (usize, usize),
    /// Index into the anchor shape list.
    pub shape: usize,
    /// Pixel centre `(u, v)`.
    pub center: [f64; 2],
    pub size: [f64; 2],
}

impl Anchor {
    pub fn bbox(&self) -> [f64; 4] {
        let [u, v] = self.center;
        let [w, h] = self.size;
        [u - w / 2.0, v - h / 2.0, u + w / 2.0, v + h / 2.0]
    }
}

/// Anchors of a `wq×hq` grid, cell-major: anchor `k·A + a` belongs to query
/// `k` and shape `a`. Centres sit at `((i + 0.5)·stride, (j + 0.5)·stride)`.
pub fn generate_anchors(wq: usize, hq: usize, stride: f64, shapes: &[AnchorShape]) -> Vec<Anchor> {
    let mut out = Vec::with_capacity(wq * hq * shapes.len());
    for j in 0..hq {
        for i in 0..wq {
            for (a, s) in shapes.iter().enumerate() {
                out.push(Anchor {
                    cell: (i, j),
                    shape: a,
                    center: [(i as f64 + 0.5) * stride, (j as f64 + 0.5) * stride],
                    size: [s.w, s.h],
                });
            }
        }
    }
    out
}

pub fn iou_2d(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |r: &[f64; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let union = area(a) + area(b) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// 3D priors attached to anchors: mean depth per anchor shape and mean
/// `[h, w, l]` per class.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorPriors {
    pub shape_z: Vec<f64>,
    pub class_size: Vec<[f64; 3]>,
}

const DEFAULT_SIZES: [[f64; 3]; 2] = [[1.5, 1.6, 3.9], [1.75, 0.6, 0.8]];

impl AnchorPriors {
    pub fn defaults(num_shapes: usize, num_classes: usize) -> Self {
        AnchorPriors {
            shape_z: vec![15.0; num_shapes],
            class_size: (0..num_classes).map(|c| DEFAULT_SIZES[c.min(1)]).collect(),
        }
    }
}

/// Averages training labels into priors. Each object votes for the anchor
/// shape whose centred box overlaps its 2D box best; shapes without votes
/// take the overall mean depth.
pub fn estimate_priors<'a>(
    frames: impl IntoIterator<Item = &'a [ObjectLabel]>,
    shapes: &[AnchorShape],
    num_classes: usize,
) -> AnchorPriors {
    let mut z_sum = vec![0.0; shapes.len()];
    let mut z_n = vec![0usize; shapes.len()];
    let mut size_sum = vec![[0.0; 3]; num_classes];
    let mut size_n = vec![0usize; num_classes];
    let (mut all_z, mut all_n) = (0.0, 0usize);
    for labels in frames {
        for l in labels {
            let Some(c) = l.class().filter(|&c| c < num_classes) else { continue };
            let (w, h) = (l.bbox[2] - l.bbox[0], l.bbox[3] - l.bbox[1]);
            let gt = [-w / 2.0, -h / 2.0, w / 2.0, h / 2.0];
            let mut best = (0, -1.0);
            for (a, s) in shapes.iter().enumerate() {
                let iou = iou_2d(&gt, &[-s.w / 2.0, -s.h / 2.0, s.w / 2.0, s.h / 2.0]);
                if iou > best.1 {
                    best = (a, iou);
                }
            }
            let z = l.location[2];
            z_sum[best.0] += z;
            z_n[best.0] += 1;
            all_z += z;
            all_n += 1;
            for k in 0..3 {
                size_sum[c][k] += l.dimensions[k];
            }
            size_n[c] += 1;
        }
    }
    let mut priors = AnchorPriors::defaults(shapes.len(), num_classes);
    let mean_z = if all_n > 0 { all_z / all_n as f64 } else { 15.0 };
    for a in 0..shapes.len() {
        priors.shape_z[a] = if z_n[a] > 0 { z_sum[a] / z_n[a] as f64 } else { mean_z };
    }
    for c in 0..num_classes {
        if size_n[c] > 0 {
            priors.class_size[c] = size_sum[c].map(|s| s / size_n[c] as f64);
        }
    }
    priors
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    Positive { gt: usize, class: usize },
    Negative,
    Ignore,
}

impl Assignment {
    pub fn is_positive(&self) -> bool {
        matches!(self, Assignment::Positive { .. })
    }
}

/// IoU-threshold assignment of anchors to `(box, class)` ground truths. An
/// anchor is positive above `τ_fg` (matched to its best box), negative below
/// `τ_bg` and ignored in between. With low-quality matching, each box's
/// best anchors (IoU > 0) are also positive for it when not already
/// positive, and a box left without any positive anchor takes its best
/// anchor that is still free.
pub fn assign_targets(anchors: &[Anchor], gts: &[([f64; 4], usize)], cfg: &LossConfig) -> Vec<Assignment> {
    let mut best_for_gt = vec![0.0f64; gts.len()];
    let ious: Vec<Vec<f64>> = anchors
        .iter()
        .map(|a| {
            let b = a.bbox();
            gts.iter()
                .enumerate()
                .map(|(i, (g, _))| {
                    let iou = iou_2d(&b, g);
                    best_for_gt[i] = best_for_gt[i].max(iou);
                    iou
                })
                .collect()
        })
        .collect();
    let mut out: Vec<Assignment> = ious
        .iter()
        .map(|row| {
            let mut best = (0usize, 0.0f64);
            for (i, &v) in row.iter().enumerate() {
                if v > best.1 {
                    best = (i, v);
                }
            }
            if !row.is_empty() && best.1 > cfg.tau_fg {
                Assignment::Positive { gt: best.0, class: gts[best.0].1 }
            } else if best.1 < cfg.tau_bg {
                Assignment::Negative
            } else {
                Assignment::Ignore
            }
        })
        .collect();
    if cfg.low_quality_matches {
        for (gi, &(_, class)) in gts.iter().enumerate() {
            if best_for_gt[gi] <= 0.0 {
                continue;
            }
            for (ai, row) in ious.iter().enumerate() {
                if row[gi] == best_for_gt[gi] && !out[ai].is_positive() {
                    out[ai] = Assignment::Positive { gt: gi, class };
                }
            }
        }
        // A box whose best anchors all went to other boxes takes its best
        // remaining anchor instead.
        for (gi, &(_, class)) in gts.iter().enumerate() {
            if out.iter().any(|a| matches!(a, Assignment::Positive { gt, .. } if *gt == gi)) {
                continue;
            }
            let free = ious.iter().enumerate().filter(|(ai, row)| !out[*ai].is_positive() && row[gi] > 0.0);
            let best = free.map(|(_, row)| row[gi]).fold(0.0, f64::max);
            if best <= 0.0 {
                continue;
            }
            for (ai, row) in ious.iter().enumerate() {
                if row[gi] == best && !out[ai].is_positive() {
                    out[ai] = Assignment::Positive { gt: gi, class };
                }
            }
        }
    }
    out
}
