use alloc::vec;
use alloc::vec::Vec;

use super::anchors::{assign_targets, Anchor, AnchorPriors, Assignment};
use super::coder::{encode_box, REG_DIMS};
use crate::config::LossConfig;
use crate::label::{Calibration, ObjectLabel};
use crate::tensor::{Element, Graph, Var};
use crate::{Error, Result};

/// `log σ(x)` without overflow.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -libm::log1p(libm::exp(-x))
    } else {
        x - libm::log1p(libm::exp(x))
    }
}

fn sigmoid(x: f64) -> f64 {
    libm::exp(log_sigmoid(x))
}

const PROB_CLAMP: f64 = 1e-7;

/// Focal loss of a predicted probability against a binary label:
/// `−α(1−p̂)^γ log p̂` for `p = 1` and `−p̂^γ log(1−p̂)` for `p = 0`.
/// `p̂` is clamped to `[1e-7, 1 − 1e-7]`.
pub fn focal_loss(p_hat: f64, p: f64, alpha: f64, gamma: f64) -> f64 {
    let q = p_hat.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if p >= 0.5 {
        -alpha * libm::pow(1.0 - q, gamma) * libm::log(q)
    } else {
        -libm::pow(q, gamma) * libm::log(1.0 - q)
    }
}

/// Smooth L1 with breakpoint `β`.
pub fn smooth_l1(x_hat: f64, x: f64, beta: f64) -> f64 {
    let d = libm::fabs(x_hat - x);
    if d < beta {
        0.5 * d * d / beta
    } else {
        d - 0.5 * beta
    }
}

/// `−(1 − p_t) log p_t`, where `p_t` is the clamped predicted probability of
/// the labelled orientation bin.
pub fn orientation_bce(alpha_hat: f64, label: f64) -> f64 {
    let q = alpha_hat.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let pt = if label >= 0.5 { q } else { 1.0 - q };
    -(1.0 - pt) * libm::log(pt)
}

/// Per-anchor assignments and regression targets of one frame.
#[derive(Debug, Clone)]
pub struct DetectionTargets {
    pub assignments: Vec<Assignment>,
    /// Encoded box of the matched object; zeros for non-positive anchors.
    pub reg: Vec<[f64; REG_DIMS]>,
    pub num_objects: usize,
}

impl DetectionTargets {
    pub fn num_positive(&self) -> usize {
        self.assignments.iter().filter(|a| a.is_positive()).count()
    }
}

/// Assigns anchors against the frame's labelled objects of known classes;
/// `DontCare` and unknown classes never take part.
pub fn build_targets(
    anchors: &[Anchor],
    labels: &[ObjectLabel],
    num_classes: usize,
    priors: &AnchorPriors,
    calib: &Calibration,
    cfg: &LossConfig,
) -> Result<DetectionTargets> {
    let objects: Vec<(&ObjectLabel, usize)> =
        labels.iter().filter_map(|l| l.class().filter(|&c| c < num_classes).map(|c| (l, c))).collect();
    let gts: Vec<([f64; 4], usize)> = objects.iter().map(|(l, c)| (l.bbox, *c)).collect();
    let assignments = assign_targets(anchors, &gts, cfg);
    let mut reg = vec![[0.0; REG_DIMS]; anchors.len()];
    for (i, a) in assignments.iter().enumerate() {
        if let Assignment::Positive { gt, class } = *a {
            reg[i] = encode_box(&anchors[i], objects[gt].0, class, priors, calib)?;
        }
    }
    Ok(DetectionTargets { assignments, reg, num_objects: objects.len() })
}

fn check_rows<T: Element>(g: &Graph<'_, T>, x: Var, rows: usize, cols: usize, op: &'static str) -> Result<()> {
    if g.shape(x) != [rows, cols] {
        return Err(Error::shape(op, alloc::format!("expected [{rows}, {cols}], got {:?}", g.shape(x))));
    }
    Ok(())
}

/// Summed focal loss over sigmoid class logits `[N·A, K+1]`. Each channel is
/// a binary target: 1 on a positive anchor's matched class channel, 0 on
/// every other channel of positive and negative anchors. Ignored anchors
/// contribute nothing.
pub fn classification_loss<T: Element>(g: &mut Graph<'_, T>, cls: Var, targets: &DetectionTargets, cfg: &LossConfig) -> Result<Var> {
    let kc = g.shape(cls).get(1).copied().unwrap_or(0);
    check_rows(g, cls, targets.assignments.len(), kc, "classification_loss")?;
    let (alpha, gamma) = (cfg.focal_alpha, cfg.focal_gamma);
    let assignments = &targets.assignments;
    Ok(g.sum_map(cls, "focal_loss", |i, x| {
        let x = x.as_f64();
        let (a, ch) = (assignments[i / kc], i % kc);
        let (v, d) = match a {
            Assignment::Positive { class, .. } if class == ch => {
                let (p, lp) = (sigmoid(x), log_sigmoid(x));
                let q = 1.0 - p;
                let v = -alpha * libm::pow(q, gamma) * lp;
                let d = alpha * (gamma * p * libm::pow(q, gamma) * lp - libm::pow(q, gamma + 1.0));
                (v, d)
            }
            Assignment::Positive { .. } | Assignment::Negative => {
                let (p, lq) = (sigmoid(x), log_sigmoid(-x));
                let v = -libm::pow(p, gamma) * lq;
                let d = -gamma * libm::pow(p, gamma) * (1.0 - p) * lq + libm::pow(p, gamma + 1.0);
                (v, d)
            }
            _ => (0.0, 0.0),
        };
        (T::of(v), T::of(d))
    }))
}

/// Summed smooth L1 over the twelve continuous offsets of positive anchors.
pub fn regression_loss<T: Element>(g: &mut Graph<'_, T>, reg: Var, targets: &DetectionTargets, beta: f64) -> Result<Var> {
    check_rows(g, reg, targets.assignments.len(), REG_DIMS, "regression_loss")?;
    let (assignments, t) = (&targets.assignments, &targets.reg);
    Ok(g.sum_map(reg, "smooth_l1", |i, x| {
        let (a, k) = (i / REG_DIMS, i % REG_DIMS);
        if k == REG_DIMS - 1 || !assignments[a].is_positive() {
            return (T::zero(), T::zero());
        }
        let diff = x.as_f64() - t[a][k];
        let d = if libm::fabs(diff) < beta { diff / beta } else { libm::copysign(1.0, diff) };
        (T::of(smooth_l1(x.as_f64(), t[a][k], beta)), T::of(d))
    }))
}

/// Summed orientation-bin loss on the branch logit of positive anchors.
pub fn orientation_loss<T: Element>(g: &mut Graph<'_, T>, reg: Var, targets: &DetectionTargets) -> Result<Var> {
    check_rows(g, reg, targets.assignments.len(), REG_DIMS, "orientation_loss")?;
    let (assignments, t) = (&targets.assignments, &targets.reg);
    Ok(g.sum_map(reg, "orientation_bce", |i, x| {
        let (a, k) = (i / REG_DIMS, i % REG_DIMS);
        if k != REG_DIMS - 1 || !assignments[a].is_positive() {
            return (T::zero(), T::zero());
        }
        // p_t = σ(s·x) with s = +1 for label 1 and −1 for label 0.
        let s = if t[a][k] >= 0.5 { 1.0 } else { -1.0 };
        let z = s * x.as_f64();
        let (pt, lpt) = (sigmoid(z), log_sigmoid(z));
        let v = -(1.0 - pt) * lpt;
        let d = s * (1.0 - pt) * (pt * lpt - (1.0 - pt));
        (T::of(v), T::of(d))
    }))
}

/// Unnormalised loss terms of one decoder layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerLoss {
    pub cls: Var,
    pub reg: Var,
    pub orient: Var,
}

pub fn layer_loss<T: Element>(
    g: &mut Graph<'_, T>,
    cls: Var,
    reg: Var,
    targets: &DetectionTargets,
    cfg: &LossConfig,
) -> Result<LayerLoss> {
    Ok(LayerLoss {
        cls: classification_loss(g, cls, targets, cfg)?,
        reg: regression_loss(g, reg, targets, cfg.smooth_l1_beta)?,
        orient: orientation_loss(g, reg, targets)?,
    })
}

/// `Σᵢ (clsᵢ + regᵢ + orientᵢ) / |O| + w·disp`, with `|O| = 0` replaced by 1
/// and the box terms dropped for frames without objects.
pub fn total_loss<T: Element>(
    g: &mut Graph<'_, T>,
    layers: &[LayerLoss],
    disp: Option<Var>,
    num_objects: usize,
    disp_weight: f64,
) -> Result<Var> {
    let mut terms = Vec::new();
    for l in layers {
        terms.push(l.cls);
        if num_objects > 0 {
            terms.push(l.reg);
            terms.push(l.orient);
        }
    }
    let mut det: Option<Var> = None;
    for t in terms {
        det = Some(match det {
            Some(acc) => g.add(acc, t)?,
            None => t,
        });
    }
    let det = det.map(|d| g.scale(d, 1.0 / num_objects.max(1) as f64));
    let disp = disp.map(|d| g.scale(d, disp_weight));
    match (det, disp) {
        (Some(a), Some(b)) => g.add(a, b),
        (Some(a), None) | (None, Some(a)) => Ok(a),
        (None, None) => Ok(g.constant(crate::Tensor::scalar(T::zero()))),
    }
}
