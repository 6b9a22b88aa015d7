use alloc::format;
use alloc::vec;

use crate::tensor::{Backward, BackwardCtx, Element, Graph, Tensor, Var};
use crate::{Error, Result};

/// The four bilinear taps of a continuous pixel coordinate `(u, v)`: pixel
/// offsets (`None` outside the map), weights, and weight derivatives in `u`
/// and `v`.
pub(crate) struct Taps<T> {
    pub idx: [Option<usize>; 4],
    pub w: [T; 4],
    pub dwdu: [T; 4],
    pub dwdv: [T; 4],
}

pub(crate) fn taps<T: Element>(h: usize, w: usize, u: T, v: T) -> Taps<T> {
    let x0f = u.floor();
    let y0f = v.floor();
    let fx = u - x0f;
    let fy = v - y0f;
    let one = T::one();
    // Coordinates far outside the map are clamped before the integer cast;
    // they still land outside and read zero.
    let lim = T::of(1e9);
    let x0 = x0f.max(-lim).min(lim).to_i64().unwrap_or(-2);
    let y0 = y0f.max(-lim).min(lim).to_i64().unwrap_or(-2);
    let at = |x: i64, y: i64| -> Option<usize> {
        (x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h).then(|| y as usize * w + x as usize)
    };
    Taps {
        idx: [at(x0, y0), at(x0 + 1, y0), at(x0, y0 + 1), at(x0 + 1, y0 + 1)],
        w: [(one - fx) * (one - fy), fx * (one - fy), (one - fx) * fy, fx * fy],
        dwdu: [-(one - fy), one - fy, -fy, fy],
        dwdv: [-(one - fx), -fx, one - fx, fx],
    }
}

struct BilinearBack {
    h: usize,
    w: usize,
    c: usize,
}

impl<T: Element> Backward<T> for BilinearBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let og = ctx.out_grad;
        let feat = ctx.input(0).data();
        let pts = ctx.input(1).data();
        let c = self.c;
        let n = pts.len() / 2;
        let want_f = ctx.wants(0);
        let want_p = ctx.wants(1);
        let mut dpts = vec![T::zero(); pts.len()];
        for q in 0..n {
            let t = taps(self.h, self.w, pts[2 * q], pts[2 * q + 1]);
            let g = &og[q * c..(q + 1) * c];
            for k in 0..4 {
                let Some(p) = t.idx[k] else { continue };
                let f = &feat[p * c..(p + 1) * c];
                if want_p {
                    let dot: T = g.iter().zip(f).map(|(&a, &b)| a * b).sum();
                    dpts[2 * q] += dot * t.dwdu[k];
                    dpts[2 * q + 1] += dot * t.dwdv[k];
                }
                if want_f {
                    let df = &mut ctx.grad_mut(0)[p * c..(p + 1) * c];
                    for (d, &gv) in df.iter_mut().zip(g) {
                        *d += gv * t.w[k];
                    }
                }
            }
        }
        ctx.accumulate(1, &dpts);
    }
}

impl<T: Element> Graph<'_, T> {
    /// Bilinear interpolation of an `[H, W, C]` map at `[N, 2]` continuous
    /// pixel coordinates `(u, v)`; pixel centres sit on integers and taps
    /// outside the map read zero.
    pub fn bilinear_sample(&mut self, feature: Var, points: Var) -> Result<Var> {
        let (sf, sp) = (self.shape(feature).to_vec(), self.shape(points).to_vec());
        if sf.len() != 3 {
            return Err(Error::shape("bilinear_sample", format!("feature must be [H, W, C], got {sf:?}")));
        }
        if sp.len() != 2 || sp[1] != 2 {
            return Err(Error::shape("bilinear_sample", format!("points must be [N, 2], got {sp:?}")));
        }
        let (h, w, c) = (sf[0], sf[1], sf[2]);
        let n = sp[0];
        let feat = self.value(feature).data();
        let pts = self.value(points).data();
        let mut out = vec![T::zero(); n * c];
        for q in 0..n {
            let t = taps(h, w, pts[2 * q], pts[2 * q + 1]);
            let dst = &mut out[q * c..(q + 1) * c];
            for k in 0..4 {
                if let Some(p) = t.idx[k] {
                    for (d, &f) in dst.iter_mut().zip(&feat[p * c..(p + 1) * c]) {
                        *d += t.w[k] * f;
                    }
                }
            }
        }
        let out = Tensor::new(&[n, c], out)?;
        Ok(self.push(out, &[feature, points], BilinearBack { h, w, c }, "bilinear_sample"))
    }
}
