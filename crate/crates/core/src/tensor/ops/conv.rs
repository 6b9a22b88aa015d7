use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{Backward, BackwardCtx, Element, Graph, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy)]
struct ConvGeom {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Visits every (output pixel, kernel tap) pair that lands inside the
    /// input, passing the column offset and the input pixel offset.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = (oy * self.ow + ox) * self.k();
                for ky in 0..self.kh {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= self.h as isize {
                        continue;
                    }
                    for kx in 0..self.kw {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= self.w as isize {
                            continue;
                        }
                        let col = row + (ky * self.kw + kx) * self.cin;
                        let src = (iy as usize * self.w + ix as usize) * self.cin;
                        f(col, src);
                    }
                }
            }
        }
    }

    fn im2col<T: Element>(&self, x: &[T]) -> Vec<T> {
        let mut cols = vec![T::zero(); self.oh * self.ow * self.k()];
        let cin = self.cin;
        self.for_each_tap(|col, src| cols[col..col + cin].copy_from_slice(&x[src..src + cin]));
        cols
    }
}

struct ConvBack<T> {
    geom: ConvGeom,
    cols: Option<Vec<T>>,
    bias: bool,
}

impl<T: Element> Backward<T> for ConvBack<T> {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let g = self.geom;
        let og = ctx.out_grad;
        let p = g.oh * g.ow;
        let k = g.k();
        if ctx.wants(1) {
            let cols = self.cols.as_deref().unwrap_or_else(|| ctx.input(0).data());
            gemm_tn(p, k, g.cout, cols, og, ctx.grad_mut(1));
        }
        if self.bias && ctx.wants(2) {
            let gb = ctx.grad_mut(2);
            for row in og.chunks_exact(g.cout) {
                for (s, &v) in gb.iter_mut().zip(row) {
                    *s += v;
                }
            }
        }
        if ctx.wants(0) {
            let w = ctx.input(1).data();
            if g.pointwise() {
                gemm_nt(p, g.cout, k, og, w, ctx.grad_mut(0));
            } else {
                let mut dcols = vec![T::zero(); p * k];
                gemm_nt(p, g.cout, k, og, w, &mut dcols);
                let dx = ctx.grad_mut(0);
                let cin = g.cin;
                g.for_each_tap(|col, src| {
                    for (d, &v) in dx[src..src + cin].iter_mut().zip(&dcols[col..col + cin]) {
                        *d += v;
                    }
                });
            }
        }
    }
}

struct Upsample2xBack {
    h: usize,
    w: usize,
    c: usize,
}

impl<T: Element> Backward<T> for Upsample2xBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let og = ctx.out_grad;
        let (h, w, c) = (self.h, self.w, self.c);
        let dx = ctx.grad_mut(0);
        for y in 0..2 * h {
            for x in 0..2 * w {
                let src = ((y / 2) * w + x / 2) * c;
                let o = (y * 2 * w + x) * c;
                for ch in 0..c {
                    dx[src + ch] += og[o + ch];
                }
            }
        }
    }
}

impl<T: Element> Graph<'_, T> {
    /// 2D convolution of an `[H, W, Cin]` map with a `[kh, kw, Cin, Cout]`
    /// kernel and optional `[Cout]` bias. Output extent per axis is
    /// `(in + 2·padding − k) / stride + 1`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(kernel).to_vec());
        if sx.len() != 3 {
            return Err(Error::shape("conv2d", format!("input must be [H, W, C], got {sx:?}")));
        }
        if sk.len() != 4 {
            return Err(Error::shape("conv2d", format!("kernel must be [kh, kw, Cin, Cout], got {sk:?}")));
        }
        if sk[2] != sx[2] {
            return Err(Error::shape(
                "conv2d",
                format!("input channel axis 2 ({}) differs from kernel Cin axis 2 ({})", sx[2], sk[2]),
            ));
        }
        if sk[0] % 2 == 0 || sk[1] % 2 == 0 || stride == 0 {
            return Err(Error::shape("conv2d", format!("kernel extents {}x{} must be odd and stride {stride} ≥ 1", sk[0], sk[1])));
        }
        if let Some(b) = bias {
            if self.shape(b) != [sk[3]] {
                return Err(Error::shape("conv2d", format!("bias {:?} must be [{}] (kernel Cout axis 3)", self.shape(b), sk[3])));
            }
        }
        let (h, w) = (sx[0], sx[1]);
        if h + 2 * padding < sk[0] || w + 2 * padding < sk[1] {
            return Err(Error::shape("conv2d", format!("kernel {}x{} larger than padded input {h}x{w}", sk[0], sk[1])));
        }
        let geom = ConvGeom {
            h,
            w,
            cin: sx[2],
            kh: sk[0],
            kw: sk[1],
            cout: sk[3],
            stride,
            pad: padding,
            oh: (h + 2 * padding - sk[0]) / stride + 1,
            ow: (w + 2 * padding - sk[1]) / stride + 1,
        };
        let p = geom.oh * geom.ow;
        let mut out = vec![T::zero(); p * geom.cout];
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for row in out.chunks_exact_mut(geom.cout) {
                row.copy_from_slice(bv);
            }
        }
        let cols = if geom.pointwise() { None } else { Some(geom.im2col(self.value(x).data())) };
        {
            let a = cols.as_deref().unwrap_or_else(|| self.value(x).data());
            gemm_nn(p, geom.k(), geom.cout, a, self.value(kernel).data(), &mut out);
        }
        let out = Tensor::new(&[geom.oh, geom.ow, geom.cout], out)?;
        let back = ConvBack { geom, cols, bias: bias.is_some() };
        Ok(match bias {
            Some(b) => self.push(out, &[x, kernel, b], back, "conv2d"),
            None => self.push(out, &[x, kernel], back, "conv2d"),
        })
    }

    /// Nearest-neighbour ×2 upsampling of an `[H, W, C]` map.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::shape("upsample2x", format!("input must be [H, W, C], got {s:?}")));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(4 * h * w * c);
        for y in 0..2 * h {
            for xx in 0..2 * w {
                let o = ((y / 2) * w + xx / 2) * c;
                data.extend_from_slice(&src[o..o + c]);
            }
        }
        let out = Tensor::new(&[2 * h, 2 * w, c], data)?;
        Ok(self.push(out, &[x], Upsample2xBack { h, w, c }, "upsample2x"))
    }
}
