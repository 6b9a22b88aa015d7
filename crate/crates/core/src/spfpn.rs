//! Stereo-preserving cost-volume pyramid.
//!
//! Primary and enhanced unary features of each scale are correlated into
//! cost volumes whose channels are disparity bins. Volumes of one scale share
//! a bin definition and are summed; volumes of different scales do not, so
//! they are aggregated bottom-up by strided convolution and channel
//! concatenation, keeping each level's native bins intact in its first
//! channels. Finally each level is projected to the decoder width.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::backbone::UnaryPyramids;
use crate::config::{ModelConfig, PyramidVariant};
use crate::nn::Conv2d;
use crate::tensor::{Backward, BackwardCtx, Element, Graph, ParamBuilder, Tensor, Var};
use crate::{Error, Result};

/// Bin count of a level's cost volume and the full-resolution pixel step of
/// one bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DisparityBins {
    pub count: usize,
    pub pixel_step: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct StereoFeaturePyramid {
    pub cost_primary: [Var; 3],
    pub cost_enhanced: [Var; 3],
    pub init: [Var; 3],
    pub aggregated: [Var; 3],
    pub projected: [Var; 3],
    pub bins: [DisparityBins; 3],
}

struct CorrelationBack {
    h: usize,
    w: usize,
    c: usize,
    d: usize,
}

impl<T: Element> Backward<T> for CorrelationBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let og = ctx.out_grad;
        let (l, r) = (ctx.input(0).data(), ctx.input(1).data());
        let (w, c, d) = (self.w, self.c, self.d);
        let inv = T::one() / T::of(c as f64);
        if ctx.wants(0) {
            let dl = ctx.grad_mut(0);
            for y in 0..self.h {
                for x in 0..w {
                    let lo = (y * w + x) * c;
                    for k in 0..d.min(x + 1) {
                        let gv = og[(y * w + x) * d + k] * inv;
                        let ro = (y * w + x - k) * c;
                        for ch in 0..c {
                            dl[lo + ch] += gv * r[ro + ch];
                        }
                    }
                }
            }
        }
        if ctx.wants(1) {
            let dr = ctx.grad_mut(1);
            for y in 0..self.h {
                for x in 0..w {
                    let lo = (y * w + x) * c;
                    for k in 0..d.min(x + 1) {
                        let gv = og[(y * w + x) * d + k] * inv;
                        let ro = (y * w + x - k) * c;
                        for ch in 0..c {
                            dr[ro + ch] += gv * l[lo + ch];
                        }
                    }
                }
            }
        }
    }
}

/// Correlation cost volume `out(v, u, d) = (1/C) Σ_c L(v, u, c) · R(v, u − d, c)`
/// over `[H, W, C]` features; positions with `u − d < 0` hold 0. Bins
/// beyond the map width are all zero.
pub fn correlation_cost_volume<T: Element>(g: &mut Graph<'_, T>, left: Var, right: Var, bins: usize) -> Result<Var> {
    let (sl, sr) = (g.shape(left).to_vec(), g.shape(right).to_vec());
    if sl.len() != 3 || sl != sr {
        return Err(Error::shape("correlation", format!("left {sl:?} and right {sr:?} must be equal [H, W, C]")));
    }
    if bins == 0 {
        return Err(Error::config("correlation needs at least one disparity bin"));
    }
    let (h, w, c) = (sl[0], sl[1], sl[2]);
    let (l, r) = (g.value(left).data(), g.value(right).data());
    let inv = T::one() / T::of(c as f64);
    let mut out = vec![T::zero(); h * w * bins];
    for y in 0..h {
        for x in 0..w {
            let lf = &l[(y * w + x) * c..(y * w + x + 1) * c];
            for k in 0..bins.min(x + 1) {
                let rf = &r[(y * w + x - k) * c..(y * w + x - k + 1) * c];
                let dot: T = lf.iter().zip(rf).map(|(&a, &b)| a * b).sum();
                out[(y * w + x) * bins + k] = dot * inv;
            }
        }
    }
    let out = Tensor::new(&[h, w, bins], out)?;
    Ok(g.push(out, &[left, right], CorrelationBack { h, w, c, d: bins }, "correlation"))
}

/// Sums two cost volumes that share a disparity-bin definition.
pub fn intra_scale_fuse<T: Element>(g: &mut Graph<'_, T>, primary: Var, enhanced: Var) -> Result<Var> {
    let (a, b) = (g.shape(primary).to_vec(), g.shape(enhanced).to_vec());
    if a != b {
        return Err(Error::shape(
            "intra_scale_fuse",
            format!(
                "primary volume has {} bins over {}x{}, enhanced has {} bins over {}x{}; only identical bin definitions may be summed",
                a.last().unwrap_or(&0),
                a.get(1).unwrap_or(&0),
                a.first().unwrap_or(&0),
                b.last().unwrap_or(&0),
                b.get(1).unwrap_or(&0),
                b.first().unwrap_or(&0)
            ),
        ));
    }
    g.add(primary, enhanced)
}

#[derive(Debug, Clone)]
pub struct Spfpn {
    pub variant: PyramidVariant,
    pub bins: [usize; 3],
    /// Bottom-up strided convolutions into levels 2 and 3.
    down: Vec<Conv2d>,
    /// Top-down 1×1 channel maps into levels 1 and 2 (FPN-style variants).
    up: Vec<Conv2d>,
    project: Vec<Conv2d>,
}

impl Spfpn {
    pub fn new<T: Element>(pb: &mut ParamBuilder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        let mut p = pb.sub("spfpn");
        let bins = cfg.bins;
        let channels = cfg.stereo_channels();
        let mut down = Vec::new();
        let mut up = Vec::new();
        match cfg.pyramid {
            PyramidVariant::Spfpn => {
                for l in 1..3 {
                    let c = channels[l - 1];
                    down.push(Conv2d::new(&mut p, &format!("down{l}"), c, c, 3, 2, true)?);
                }
            }
            PyramidVariant::TopdownFpn | PyramidVariant::BifpnLike => {
                for l in 0..2 {
                    up.push(Conv2d::new(&mut p, &format!("up{l}"), bins[l + 1], bins[l], 1, 1, true)?);
                }
                if cfg.pyramid == PyramidVariant::BifpnLike {
                    for l in 1..3 {
                        down.push(Conv2d::new(&mut p, &format!("down{l}"), bins[l - 1], bins[l], 3, 2, true)?);
                    }
                }
            }
        }
        let project = (0..3)
            .map(|l| Conv2d::new(&mut p, &format!("project{l}"), channels[l], cfg.c_dec, 1, 1, true))
            .collect::<Result<Vec<_>>>()?;
        Ok(Spfpn { variant: cfg.pyramid, bins, down, up, project })
    }

    /// Cross-scale fusion of the per-scale volumes, ordered fine to coarse.
    /// In the bin-preserving variant `C¹ = C¹_init` and
    /// `Cˡ = concat[Cˡ_init, relu(conv3×3,s2(Cˡ⁻¹))]`.
    pub fn cross_scale_aggregate<T: Element>(&self, g: &mut Graph<'_, T>, init: &[Var]) -> Result<Vec<Var>> {
        let mut out: Vec<Var> = Vec::with_capacity(init.len());
        match self.variant {
            PyramidVariant::Spfpn => {
                for (l, &native) in init.iter().enumerate() {
                    if l == 0 {
                        out.push(native);
                        continue;
                    }
                    let conv = self.down.get(l - 1).ok_or_else(|| Error::config("more levels than strided convolutions"))?;
                    let down = conv.forward(g, out[l - 1])?;
                    let down = g.relu(down);
                    let (sn, sd) = (g.shape(native), g.shape(down));
                    if sn[..2] != sd[..2] {
                        return Err(Error::shape(
                            "cross_scale_aggregate",
                            format!("level {} is {:?} but the strided level below gives {:?}", l + 1, &sn[..2], &sd[..2]),
                        ));
                    }
                    out.push(g.concat(&[native, down], 2)?);
                }
            }
            PyramidVariant::TopdownFpn | PyramidVariant::BifpnLike => {
                let n = init.len();
                let mut td = init.to_vec();
                for l in (0..n.saturating_sub(1)).rev() {
                    let up = g.upsample2x(td[l + 1])?;
                    let up = self.up[l].forward(g, up)?;
                    td[l] = g.add(init[l], up)?;
                }
                if self.variant == PyramidVariant::TopdownFpn {
                    out = td;
                } else {
                    out.push(td[0]);
                    for l in 1..n {
                        let down = self.down[l - 1].forward(g, out[l - 1])?;
                        let down = g.relu(down);
                        out.push(g.add(td[l], down)?);
                    }
                }
            }
        }
        Ok(out)
    }

    /// 1×1 projection of each aggregated level to the decoder width.
    pub fn project_scales<T: Element>(&self, g: &mut Graph<'_, T>, aggregated: &[Var]) -> Result<Vec<Var>> {
        aggregated.iter().zip(&self.project).map(|(&x, conv)| conv.forward(g, x)).collect()
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, unary: &UnaryPyramids) -> Result<StereoFeaturePyramid> {
        let mut cost_primary = [unary.left.primary[0]; 3];
        let mut cost_enhanced = cost_primary;
        let mut init = cost_primary;
        let mut bins = [DisparityBins { count: 0, pixel_step: 0 }; 3];
        for l in 0..3 {
            cost_primary[l] = correlation_cost_volume(g, unary.left.primary[l], unary.right.primary[l], self.bins[l])?;
            cost_enhanced[l] = correlation_cost_volume(g, unary.left.enhanced[l], unary.right.enhanced[l], self.bins[l])?;
            init[l] = intra_scale_fuse(g, cost_primary[l], cost_enhanced[l])?;
            bins[l] = DisparityBins { count: self.bins[l], pixel_step: 4 << l };
        }
        let agg = self.cross_scale_aggregate(g, &init)?;
        let proj = self.project_scales(g, &agg)?;
        Ok(StereoFeaturePyramid {
            cost_primary,
            cost_enhanced,
            init,
            aggregated: [agg[0], agg[1], agg[2]],
            projected: [proj[0], proj[1], proj[2]],
            bins,
        })
    }
}
