use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{numel_of, Backward, BackwardCtx, Element, Graph, Tensor, Var};
use crate::{Error, Result};

fn same_shape<T: Element>(g: &Graph<'_, T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(op, format!("{:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    Ok(())
}

struct AddBack;
impl<T: Element> Backward<T> for AddBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let og = ctx.out_grad;
        ctx.accumulate(0, og);
        ctx.accumulate(1, og);
    }
}

struct SubBack;
impl<T: Element> Backward<T> for SubBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let og = ctx.out_grad;
        ctx.accumulate(0, og);
        if ctx.wants(1) {
            for (s, &g) in ctx.grad_mut(1).iter_mut().zip(og) {
                *s -= g;
            }
        }
    }
}

struct MulBack;
impl<T: Element> Backward<T> for MulBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let og = ctx.out_grad;
        let (a, b) = (ctx.input(0).data(), ctx.input(1).data());
        if ctx.wants(0) {
            for ((s, &g), &bv) in ctx.grad_mut(0).iter_mut().zip(og).zip(b) {
                *s += g * bv;
            }
        }
        if ctx.wants(1) {
            for ((s, &g), &av) in ctx.grad_mut(1).iter_mut().zip(og).zip(a) {
                *s += g * av;
            }
        }
    }
}

struct ScaleBack<T>(T);
impl<T: Element> Backward<T> for ScaleBack<T> {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let og = ctx.out_grad;
        for (s, &g) in ctx.grad_mut(0).iter_mut().zip(og) {
            *s += g * self.0;
        }
    }
}

struct PassBack;
impl<T: Element> Backward<T> for PassBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let og = ctx.out_grad;
        ctx.accumulate(0, og);
    }
}

struct ReluBack;
impl<T: Element> Backward<T> for ReluBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let og = ctx.out_grad;
        let x = ctx.input(0).data();
        for ((s, &g), &xv) in ctx.grad_mut(0).iter_mut().zip(og).zip(x) {
            if xv > T::zero() {
                *s += g;
            }
        }
    }
}

struct SigmoidBack;
impl<T: Element> Backward<T> for SigmoidBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let og = ctx.out_grad;
        let y = ctx.out.data();
        for ((s, &g), &yv) in ctx.grad_mut(0).iter_mut().zip(og).zip(y) {
            *s += g * yv * (T::one() - yv);
        }
    }
}

struct SumBack<T>(T);
impl<T: Element> Backward<T> for SumBack<T> {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let g = ctx.out_grad[0] * self.0;
        ctx.grad_mut(0).iter_mut().for_each(|s| *s += g);
    }
}

struct TransposeBack {
    rows: usize,
    cols: usize,
}
impl<T: Element> Backward<T> for TransposeBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let og = ctx.out_grad;
        let (r, c) = (self.rows, self.cols);
        let s = ctx.grad_mut(0);
        for i in 0..r {
            for j in 0..c {
                s[i * c + j] += og[j * r + i];
            }
        }
    }
}

struct MatmulBack {
    m: usize,
    k: usize,
    n: usize,
}
impl<T: Element> Backward<T> for MatmulBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let og = ctx.out_grad;
        let (a, b) = (ctx.input(0).data(), ctx.input(1).data());
        if ctx.wants(0) {
            gemm_nt(self.m, self.n, self.k, og, b, ctx.grad_mut(0));
        }
        if ctx.wants(1) {
            gemm_tn(self.m, self.k, self.n, a, og, ctx.grad_mut(1));
        }
    }
}

struct LinearBack {
    rows: usize,
    din: usize,
    dout: usize,
    bias: bool,
}
impl<T: Element> Backward<T> for LinearBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let og = ctx.out_grad;
        let (x, w) = (ctx.input(0).data(), ctx.input(1).data());
        if ctx.wants(0) {
            gemm_nt(self.rows, self.dout, self.din, og, w, ctx.grad_mut(0));
        }
        if ctx.wants(1) {
            gemm_tn(self.rows, self.din, self.dout, x, og, ctx.grad_mut(1));
        }
        if self.bias && ctx.wants(2) {
            let gb = ctx.grad_mut(2);
            for row in og.chunks_exact(self.dout) {
                for (s, &g) in gb.iter_mut().zip(row) {
                    *s += g;
                }
            }
        }
    }
}

/// Concatenation along an axis; inputs are viewed as `[outer, extent_i, inner]`.
struct ConcatBack {
    outer: usize,
    inner: usize,
    extents: Vec<usize>,
}
impl<T: Element> Backward<T> for ConcatBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let og = ctx.out_grad;
        let total: usize = self.extents.iter().sum();
        let mut start = 0;
        for (i, &e) in self.extents.iter().enumerate() {
            if ctx.wants(i) {
                let inner = self.inner;
                let s = ctx.grad_mut(i);
                for o in 0..self.outer {
                    let src = &og[(o * total + start) * inner..(o * total + start + e) * inner];
                    for (d, &v) in s[o * e * inner..(o + 1) * e * inner].iter_mut().zip(src) {
                        *d += v;
                    }
                }
            }
            start += e;
        }
    }
}

struct SliceBack {
    outer: usize,
    inner: usize,
    extent: usize,
    start: usize,
    len: usize,
}
impl<T: Element> Backward<T> for SliceBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let og = ctx.out_grad;
        let s = ctx.grad_mut(0);
        let inner = self.inner;
        for o in 0..self.outer {
            let dst = &mut s[(o * self.extent + self.start) * inner..(o * self.extent + self.start + self.len) * inner];
            for (d, &v) in dst.iter_mut().zip(&og[o * self.len * inner..(o + 1) * self.len * inner]) {
                *d += v;
            }
        }
    }
}

struct SumMapBack<T>(Vec<T>);
impl<T: Element> Backward<T> for SumMapBack<T> {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let g = ctx.out_grad[0];
        for (s, &d) in ctx.grad_mut(0).iter_mut().zip(&self.0) {
            *s += g * d;
        }
    }
}

pub(crate) fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (numel_of(&shape[..axis]), numel_of(&shape[axis + 1..]))
}

impl<T: Element> Graph<'_, T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(self.shape(a), data)?;
        Ok(self.push(out, &[a, b], AddBack, "add"))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "sub", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x - y).collect();
        let out = Tensor::new(self.shape(a), data)?;
        Ok(self.push(out, &[a, b], SubBack, "sub"))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(self.shape(a), data)?;
        Ok(self.push(out, &[a, b], MulBack, "mul"))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let f = T::of(factor);
        let out = self.value(a).map(|v| v * f);
        self.push(out, &[a], ScaleBack(f), "scale")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(T::zero()));
        self.push(out, &[a], ReluBack, "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, &[a], SigmoidBack, "sigmoid")
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), &[a], SumBack(T::one()), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::of(self.value(a).numel() as f64);
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s / n), &[a], SumBack(T::one() / n), "mean")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, &[a], PassBack, "reshape"))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        if shape.len() != 2 {
            return Err(Error::shape("transpose", format!("expected rank 2, got {shape:?}")));
        }
        let (rows, cols) = (shape[0], shape[1]);
        let data = crate::tensor::kernels::transpose(rows, cols, self.value(a).data());
        let out = Tensor::new(&[cols, rows], data)?;
        Ok(self.push(out, &[a], TransposeBack { rows, cols }, "transpose"))
    }

    /// `[m,k] × [k,n] → [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} × {sb:?}: inner axes must agree")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut c = vec![T::zero(); m * n];
        gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), &mut c);
        let out = Tensor::new(&[m, n], c)?;
        Ok(self.push(out, &[a, b], MatmulBack { m, k, n }, "matmul"))
    }

    /// Affine map over the last axis: `x[..., in] · w[in, out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sw.len() != 2 || sx.last() != Some(&sw[0]) {
            return Err(Error::shape("linear", format!("input {sx:?} against weight {sw:?}: last input axis must equal weight axis 0")));
        }
        let (din, dout) = (sw[0], sw[1]);
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(Error::shape("linear", format!("bias {:?} must be [{dout}]", self.shape(b))));
            }
        }
        let rows = self.value(x).numel() / din;
        let mut c = vec![T::zero(); rows * dout];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in c.chunks_exact_mut(dout) {
                row.copy_from_slice(bias);
            }
        }
        gemm_nn(rows, din, dout, self.value(x).data(), self.value(w).data(), &mut c);
        let mut shape = sx.to_vec();
        *shape.last_mut().unwrap() = dout;
        let out = Tensor::new(&shape, c)?;
        let back = LinearBack { rows, din, dout, bias: b.is_some() };
        Ok(match b {
            Some(b) => self.push(out, &[x, w, b], back, "linear"),
            None => self.push(out, &[x, w], back, "linear"),
        })
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?).to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut extents = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", format!("{s:?} vs {first:?} off axis {axis}")));
            }
            extents.push(s[axis]);
        }
        let (outer, inner) = outer_inner(&first, axis);
        let total: usize = extents.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &e) in parts.iter().zip(&extents) {
                data.extend_from_slice(&self.value(p).data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, parts, ConcatBack { outer, inner, extents }, "concat"))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape("slice", format!("[{start}, {}) on axis {axis} of {shape:?}", start + len)));
        }
        let (outer, inner) = outer_inner(&shape, axis);
        let extent = shape[axis];
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&src[(o * extent + start) * inner..(o * extent + start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(out, &[a], SliceBack { outer, inner, extent, start, len }, "slice"))
    }

    /// Scalar `Σᵢ f(i, xᵢ).0` whose derivative in `xᵢ` is `f(i, xᵢ).1`.
    /// Used for elementwise losses with closed-form derivatives.
    pub fn sum_map(&mut self, a: Var, name: &'static str, f: impl Fn(usize, T) -> (T, T)) -> Var {
        let mut total = T::zero();
        let mut deriv = Vec::with_capacity(self.value(a).numel());
        for (i, &x) in self.value(a).data().iter().enumerate() {
            let (v, d) = f(i, x);
            total += v;
            deriv.push(d);
        }
        self.push(Tensor::scalar(total), &[a], SumMapBack(deriv), name)
    }
}

#[inline]
pub(crate) fn sigmoid<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
