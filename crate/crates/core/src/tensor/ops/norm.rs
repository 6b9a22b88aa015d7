use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{Backward, BackwardCtx, Element, Graph, Tensor, Var};
use crate::{Error, Result};

const EPS: f64 = 1e-5;

/// Normalisation over index groups. `channel_norm` groups by channel across
/// spatial positions; `layer_norm` groups by row across channels. Both
/// share the affine parameters per channel.
struct NormBack<T> {
    rows: usize,
    cols: usize,
    by_channel: bool,
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Element> NormBack<T> {
    fn index(&self, group: usize, member: usize) -> usize {
        if self.by_channel {
            member * self.cols + group
        } else {
            group * self.cols + member
        }
    }

    fn groups(&self) -> (usize, usize) {
        if self.by_channel {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }
}

impl<T: Element> Backward<T> for NormBack<T> {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let og = ctx.out_grad;
        let gamma = ctx.input(1).data();
        let c = self.cols;
        if ctx.wants(1) || ctx.wants(2) {
            let mut dg = vec![T::zero(); c];
            let mut db = vec![T::zero(); c];
            for (i, (&g, &xh)) in og.iter().zip(&self.xhat).enumerate() {
                dg[i % c] += g * xh;
                db[i % c] += g;
            }
            ctx.accumulate(1, &dg);
            ctx.accumulate(2, &db);
        }
        if ctx.wants(0) {
            let (ngroups, nmembers) = self.groups();
            let n = T::of(nmembers as f64);
            let mut dx = vec![T::zero(); og.len()];
            for grp in 0..ngroups {
                let mut mean_d = T::zero();
                let mut mean_dx = T::zero();
                for m in 0..nmembers {
                    let i = self.index(grp, m);
                    let d = og[i] * gamma[i % c];
                    mean_d += d;
                    mean_dx += d * self.xhat[i];
                }
                mean_d /= n;
                mean_dx /= n;
                for m in 0..nmembers {
                    let i = self.index(grp, m);
                    let d = og[i] * gamma[i % c];
                    dx[i] = self.inv_std[grp] * (d - mean_d - self.xhat[i] * mean_dx);
                }
            }
            ctx.accumulate(0, &dx);
        }
    }
}

impl<T: Element> Graph<'_, T> {
    fn normalize(&mut self, x: Var, gamma: Var, beta: Var, by_channel: bool, name: &'static str) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or_else(|| Error::shape(name, "rank-0 input"))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(
                name,
                format!("affine {:?}/{:?} must be [{c}] (last input axis)", self.shape(gamma), self.shape(beta)),
            ));
        }
        let rows = self.value(x).numel() / c;
        let mut back = NormBack { rows, cols: c, by_channel, xhat: vec![T::zero(); rows * c], inv_std: Vec::new() };
        let (ngroups, nmembers) = back.groups();
        let n = T::of(nmembers as f64);
        let xs = self.value(x).data();
        for grp in 0..ngroups {
            let mut mean = T::zero();
            for m in 0..nmembers {
                mean += xs[back.index(grp, m)];
            }
            mean /= n;
            let mut var = T::zero();
            for m in 0..nmembers {
                let d = xs[back.index(grp, m)] - mean;
                var += d * d;
            }
            var /= n;
            let inv = T::one() / (var + T::of(EPS)).sqrt();
            for m in 0..nmembers {
                let i = back.index(grp, m);
                back.xhat[i] = (xs[i] - mean) * inv;
            }
            back.inv_std.push(inv);
        }
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let data = back.xhat.iter().enumerate().map(|(i, &xh)| gv[i % c] * xh + bv[i % c]).collect();
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, &[x, gamma, beta], back, name))
    }

    /// Per-channel affine normalisation over the spatial positions of one
    /// `[H, W, C]` sample.
    pub fn channel_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        if self.shape(x).len() != 3 {
            return Err(Error::shape("channel_norm", format!("input must be [H, W, C], got {:?}", self.shape(x))));
        }
        self.normalize(x, gamma, beta, true, "channel_norm")
    }

    /// Affine normalisation of each row over its last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        self.normalize(x, gamma, beta, false, "layer_norm")
    }
}
