use alloc::format;
use alloc::vec;

use super::basic::outer_inner;
use crate::tensor::{Backward, BackwardCtx, Element, Graph, Tensor, Var};
use crate::{Error, Result};

struct SoftmaxBack {
    outer: usize,
    extent: usize,
    inner: usize,
}

impl<T: Element> Backward<T> for SoftmaxBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let og = ctx.out_grad;
        let y = ctx.out.data();
        let (d, inner) = (self.extent, self.inner);
        let s = ctx.grad_mut(0);
        for o in 0..self.outer {
            for i in 0..inner {
                let base = o * d * inner + i;
                let mut dot = T::zero();
                for k in 0..d {
                    dot += og[base + k * inner] * y[base + k * inner];
                }
                for k in 0..d {
                    let idx = base + k * inner;
                    s[idx] += y[idx] * (og[idx] - dot);
                }
            }
        }
    }
}

/// Max-subtracted softmax of `x` viewed as `[outer, extent, inner]`, written into `out`.
pub(crate) fn softmax_into<T: Element>(x: &[T], out: &mut [T], outer: usize, extent: usize, inner: usize) {
    for o in 0..outer {
        for i in 0..inner {
            let base = o * extent * inner + i;
            let mut m = T::neg_infinity();
            for k in 0..extent {
                m = m.max(x[base + k * inner]);
            }
            let mut z = T::zero();
            for k in 0..extent {
                let e = (x[base + k * inner] - m).exp();
                out[base + k * inner] = e;
                z += e;
            }
            for k in 0..extent {
                out[base + k * inner] /= z;
            }
        }
    }
}

impl<T: Element> Graph<'_, T> {
    /// Softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, inner) = outer_inner(&shape, axis);
        let extent = shape[axis];
        let mut data = vec![T::zero(); self.value(x).numel()];
        softmax_into(self.value(x).data(), &mut data, outer, extent, inner);
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, &[x], SoftmaxBack { outer, extent, inner }, "softmax"))
    }
}
