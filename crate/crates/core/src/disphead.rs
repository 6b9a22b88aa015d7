//! Disparity logits, SoftArgMax regression, block-matching pseudo ground
//! truth and the stereo focal loss.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::nn::Conv2d;
use crate::tensor::{Backward, BackwardCtx, Element, Graph, ParamBuilder, Tensor, Var};
use crate::{Error, Result};

/// Logits handed to the positional encoding (stride 16) and the upsampled
/// logits used for supervision (stride 4). Both carry `C_disp` bins.
#[derive(Debug, Clone, Copy)]
pub struct DisparityField {
    pub logits_q: Var,
    pub logits_sup: Var,
}

#[derive(Debug, Clone)]
pub struct DisparityHead {
    hidden: Conv2d,
    logits: Conv2d,
    up: [Conv2d; 2],
    pub c_disp: usize,
}

impl DisparityHead {
    pub fn new<T: Element>(pb: &mut ParamBuilder<'_, T>, c_in: usize, c_hidden: usize, c_disp: usize) -> Result<Self> {
        let mut p = pb.sub("disphead");
        Ok(DisparityHead {
            hidden: Conv2d::new(&mut p, "hidden", c_in, c_hidden, 3, 1, true)?,
            logits: Conv2d::new(&mut p, "logits", c_hidden, c_disp, 1, 1, true)?,
            up: [
                Conv2d::new(&mut p, "up0", c_disp, c_disp, 3, 1, true)?,
                Conv2d::new(&mut p, "up1", c_disp, c_disp, 3, 1, true)?,
            ],
            c_disp,
        })
    }

    /// `logits_q = conv1×1(relu(conv3×3(C³)))`; the supervision logits add
    /// two ×2 upsample + 3×3 conv stages on top.
    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, c3: Var) -> Result<DisparityField> {
        let h = self.hidden.forward(g, c3)?;
        let h = g.relu(h);
        let logits_q = self.logits.forward(g, h)?;
        let x = g.upsample2x(logits_q)?;
        let x = self.up[0].forward(g, x)?;
        let x = g.relu(x);
        let x = g.upsample2x(x)?;
        let logits_sup = self.up[1].forward(g, x)?;
        Ok(DisparityField { logits_q, logits_sup })
    }
}

/// Expected bin index `Σ_d d·softmax(logits)_d` over the last axis.
pub fn softargmax<T: Element>(g: &mut Graph<'_, T>, logits: Var) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    let Some((&d, lead)) = shape.split_last() else {
        return Err(Error::shape("softargmax", "logits must have a bin axis"));
    };
    let p = g.softmax(logits, shape.len() - 1)?;
    let idx = g.constant(Tensor::from_fn(&[d, 1], |i| T::of(i as f64)));
    let out = g.linear(p, idx, None)?;
    if lead.is_empty() {
        g.reshape(out, &[])
    } else {
        g.reshape(out, lead)
    }
}

/// Normalised Laplace target `P(d) ∝ exp(−|d − d_gt| / σ)` over bins `0..bins`.
pub fn laplace_target(d_gt: f64, bins: usize, sigma: f64) -> Vec<f64> {
    let logits: Vec<f64> = (0..bins).map(|d| -libm::fabs(d as f64 - d_gt) / sigma).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| libm::exp(l - m)).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

struct PrecomputedBack<T>(Vec<T>);

impl<T: Element> Backward<T> for PrecomputedBack<T> {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let s = ctx.out_grad[0];
        let g = ctx.grad_mut(0);
        for (a, &b) in g.iter_mut().zip(&self.0) {
            *a += s * b;
        }
    }
}

/// Stereo focal loss and the number of pixels it averaged over. A zero
/// count means no valid pixel and a loss of exactly 0.
#[derive(Debug, Clone, Copy)]
pub struct StereoFocal {
    pub loss: Var,
    pub valid_pixels: usize,
}

/// Cross entropy of the softmax of `logits` (`[H, W, D]`) against the
/// Laplace target around each valid pixel's ground-truth bin, averaged over
/// valid pixels.
pub fn stereo_focal_loss<T: Element>(
    g: &mut Graph<'_, T>,
    logits: Var,
    target: &[f32],
    valid: &[bool],
    sigma: f64,
) -> Result<StereoFocal> {
    if !(sigma > 0.0) {
        return Err(Error::config(format!("σ must be positive, got {sigma}")));
    }
    let shape = g.shape(logits).to_vec();
    if shape.len() != 3 {
        return Err(Error::shape("stereo_focal_loss", format!("logits must be [H, W, D], got {shape:?}")));
    }
    let (pixels, d) = (shape[0] * shape[1], shape[2]);
    if target.len() != pixels || valid.len() != pixels {
        return Err(Error::shape(
            "stereo_focal_loss",
            format!("{} pixels of logits, {} targets, {} mask entries", pixels, target.len(), valid.len()),
        ));
    }
    let n = valid.iter().filter(|&&v| v).count();
    let x = g.value(logits).data();
    let mut grad = vec![T::zero(); x.len()];
    let mut total = 0.0f64;
    if n > 0 {
        let inv = 1.0 / n as f64;
        for px in 0..pixels {
            if !valid[px] {
                continue;
            }
            let row = &x[px * d..(px + 1) * d];
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b.as_f64()));
            let lse = m + libm::log(row.iter().map(|&v| libm::exp(v.as_f64() - m)).sum::<f64>());
            let p = laplace_target(target[px] as f64, d, sigma);
            for k in 0..d {
                let logp = row[k].as_f64() - lse;
                total -= p[k] * logp;
                grad[px * d + k] = T::of((libm::exp(logp) - p[k]) * inv);
            }
        }
        total *= inv;
    }
    let loss = g.push(Tensor::scalar(T::of(total)), &[logits], PrecomputedBack(grad), "stereo_focal_loss");
    Ok(StereoFocal { loss, valid_pixels: n })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockMatchParams {
    pub max_disparity: usize,
    /// Odd side length of the SAD window.
    pub window: usize,
    /// The best cost must be below this fraction of the best cost that is
    /// not adjacent to it.
    pub uniqueness: f32,
    pub lr_tolerance: f32,
}

impl BlockMatchParams {
    pub fn new(max_disparity: usize) -> Self {
        BlockMatchParams { max_disparity, window: 7, uniqueness: 0.9, lr_tolerance: 1.0 }
    }
}

/// Dense disparity in pixels with a validity mask, row-major `[H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    pub width: usize,
    pub height: usize,
    pub disparity: Vec<f32>,
    pub valid: Vec<bool>,
}

impl DisparityMap {
    pub fn valid_fraction(&self) -> f64 {
        self.valid.iter().filter(|&&v| v).count() as f64 / self.valid.len().max(1) as f64
    }

    /// Block averages of valid values over `factor×factor` cells, divided by
    /// `factor` so they are in the bin units of the coarser grid. A cell is
    /// valid when at least half of its pixels are.
    pub fn downsample(&self, factor: usize) -> DisparityMap {
        let (w, h) = (self.width / factor, self.height / factor);
        let mut disparity = vec![0.0; w * h];
        let mut valid = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let (mut sum, mut n) = (0.0f64, 0usize);
                for dy in 0..factor {
                    for dx in 0..factor {
                        let i = (y * factor + dy) * self.width + x * factor + dx;
                        if self.valid[i] {
                            sum += self.disparity[i] as f64;
                            n += 1;
                        }
                    }
                }
                if 2 * n >= factor * factor {
                    disparity[y * w + x] = (sum / n as f64 / factor as f64) as f32;
                    valid[y * w + x] = true;
                }
            }
        }
        DisparityMap { width: w, height: h, disparity, valid }
    }
}

fn grayscale<T: Element>(img: &Tensor<T>) -> Result<Vec<f32>> {
    let s = img.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::shape("block_match", format!("image must be [H, W, 3], got {s:?}")));
    }
    Ok(img
        .data()
        .chunks_exact(3)
        .map(|p| (0.299 * p[0].as_f64() + 0.587 * p[1].as_f64() + 0.114 * p[2].as_f64()) as f32)
        .collect())
}

/// Sum-of-absolute-differences block matching of the left view against the
/// right, with parabolic sub-pixel refinement, a uniqueness test and a
/// left-right consistency check.
pub fn block_match<T: Element>(left: &Tensor<T>, right: &Tensor<T>, params: &BlockMatchParams) -> Result<DisparityMap> {
    if left.shape() != right.shape() {
        return Err(Error::shape("block_match", format!("left {:?} and right {:?} differ", left.shape(), right.shape())));
    }
    if params.window % 2 == 0 || params.max_disparity == 0 {
        return Err(Error::config("block matching needs an odd window and a positive disparity range"));
    }
    let (h, w) = (left.shape()[0], left.shape()[1]);
    let (gl, gr) = (grayscale(left)?, grayscale(right)?);
    let r = params.window / 2;
    let nd = params.max_disparity;
    const INVALID: f32 = f32::INFINITY;
    // cost[(y * w + x) * nd + d]; windows that leave either image are invalid
    let mut cost = vec![INVALID; h * w * nd];
    let mut integral = vec![0.0f64; (h + 1) * (w + 1)];
    for d in 0..nd {
        for y in 0..h {
            let mut run = 0.0f64;
            for x in 0..w {
                if x >= d {
                    run += libm::fabsf(gl[y * w + x] - gr[y * w + x - d]) as f64;
                }
                integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + run;
            }
        }
        for y in r..h.saturating_sub(r) {
            for x in (r + d)..w.saturating_sub(r) {
                let (y0, y1, x0, x1) = (y - r, y + r + 1, x - r, x + r + 1);
                let s = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1] - integral[y1 * (w + 1) + x0]
                    + integral[y0 * (w + 1) + x0];
                cost[(y * w + x) * nd + d] = s as f32;
            }
        }
    }
    let best = |costs: &mut dyn Iterator<Item = (usize, f32)>| -> Option<(usize, f32)> {
        let mut b: Option<(usize, f32)> = None;
        for (d, c) in costs {
            if c.is_finite() && b.map_or(true, |(_, bc)| c < bc) {
                b = Some((d, c));
            }
        }
        b
    };
    let mut disp_r = vec![-1i32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut it = (0..nd).filter(|&d| x + d < w).map(|d| (d, cost[(y * w + x + d) * nd + d]));
            if let Some((d, _)) = best(&mut it) {
                disp_r[y * w + x] = d as i32;
            }
        }
    }
    let mut disparity = vec![0.0f32; h * w];
    let mut valid = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let c = &cost[(y * w + x) * nd..(y * w + x + 1) * nd];
            let Some((d, bc)) = best(&mut c.iter().copied().enumerate()) else { continue };
            let second = c
                .iter()
                .enumerate()
                .filter(|&(k, v)| (k as isize - d as isize).abs() > 1 && v.is_finite())
                .map(|(_, &v)| v)
                .fold(f32::INFINITY, f32::min);
            if !(bc < params.uniqueness * second) {
                continue;
            }
            let mut sub = d as f32;
            if d > 0 && d + 1 < nd && c[d - 1].is_finite() && c[d + 1].is_finite() {
                let den = c[d - 1] - 2.0 * bc + c[d + 1];
                if den > 0.0 {
                    sub += 0.5 * (c[d - 1] - c[d + 1]) / den;
                }
            }
            let dr = disp_r[y * w + x - d];
            if dr >= 0 && libm::fabsf(dr as f32 - d as f32) <= params.lr_tolerance {
                disparity[y * w + x] = sub;
                valid[y * w + x] = true;
            }
        }
    }
    Ok(DisparityMap { width: w, height: h, disparity, valid })
}
