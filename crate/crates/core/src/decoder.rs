//! Query construction, positional encodings and the deformable decoder.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::config::PeMode;
use crate::nn::{Conv2d, Linear, Norm};
use crate::tensor::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::ops::{softmax_into, taps};
use crate::tensor::{Backward, BackwardCtx, Element, Graph, ParamBuilder, Tensor, Var};
use crate::{Error, Result};

const TEMPERATURE: f64 = 10000.0;

/// Fixed sinusoidal encoding of a `Wq×Hq` grid as `[Hq, Wq, dims]`. The
/// first half of the channels encodes the column, the second half the row;
/// within each half channels alternate `sin(p·ωᵢ), cos(p·ωᵢ)` with
/// `ωᵢ = 10000^(−2i/half)`.
pub fn sine_pe_2d<T: Element>(wq: usize, hq: usize, dims: usize) -> Result<Tensor<T>> {
    if dims == 0 || dims % 4 != 0 {
        return Err(Error::config(format!("sinusoidal width {dims} must be a positive multiple of 4")));
    }
    let half = dims / 2;
    let freq: Vec<f64> = (0..half / 2).map(|i| libm::pow(TEMPERATURE, -(2.0 * i as f64) / half as f64)).collect();
    let mut data = Vec::with_capacity(wq * hq * dims);
    for v in 0..hq {
        for u in 0..wq {
            for pos in [u as f64, v as f64] {
                for &f in &freq {
                    data.push(T::of(libm::sin(pos * f)));
                    data.push(T::of(libm::cos(pos * f)));
                }
            }
        }
    }
    Tensor::new(&[hq, wq, dims], data)
}

/// Disparity-aware positional encoding: `pe_da = concat[pe_sine, softmax(logits)]`.
#[derive(Debug, Clone, Copy)]
pub struct PositionalEncoding {
    pub pe_sine: Var,
    pub pe_disp: Var,
    pub pe_da: Var,
}

pub fn dape<T: Element>(g: &mut Graph<'_, T>, disp_logits: Var, c_dec: usize) -> Result<PositionalEncoding> {
    let s = g.shape(disp_logits).to_vec();
    if s.len() != 3 {
        return Err(Error::shape("dape", format!("disparity logits must be [Hq, Wq, C_disp], got {s:?}")));
    }
    let (hq, wq, c_disp) = (s[0], s[1], s[2]);
    if c_disp >= c_dec {
        return Err(Error::config(format!("C_disp={c_disp} must be smaller than C_dec={c_dec}")));
    }
    let pe_sine = g.constant(sine_pe_2d(wq, hq, c_dec - c_disp)?);
    let pe_disp = g.softmax(disp_logits, 2)?;
    let pe_da = g.concat(&[pe_sine, pe_disp], 2)?;
    Ok(PositionalEncoding { pe_sine, pe_disp, pe_da })
}

/// Query positional encoding for the configured mode, flattened to
/// `[Nq, C_dec]`. `None` means no encoding.
pub fn query_encoding<T: Element>(g: &mut Graph<'_, T>, mode: PeMode, disp_logits: Var, c_dec: usize) -> Result<Option<Var>> {
    let s = g.shape(disp_logits).to_vec();
    let (hq, wq, c_disp) = (s[0], s[1], s[2]);
    let pe = match mode {
        PeMode::None => return Ok(None),
        PeMode::Dape => dape(g, disp_logits, c_dec)?.pe_da,
        PeMode::Sine2d => g.constant(sine_pe_2d(wq, hq, c_dec)?),
        PeMode::OneHot => {
            if c_disp >= c_dec {
                return Err(Error::config(format!("C_disp={c_disp} must be smaller than C_dec={c_dec}")));
            }
            let logits = g.value(disp_logits).data();
            let mut data = vec![T::zero(); hq * wq * c_dec];
            for px in 0..hq * wq {
                let row = &logits[px * c_disp..(px + 1) * c_disp];
                let mut best = 0;
                for (d, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = d;
                    }
                }
                data[px * c_dec + c_dec - c_disp + best] = T::one();
            }
            g.constant(Tensor::new(&[hq, wq, c_dec], data)?)
        }
    };
    Ok(Some(g.reshape(pe, &[hq * wq, c_dec])?))
}

/// Normalised centre `((k mod Wq) + 0.5)/Wq, ((k div Wq) + 0.5)/Hq` of every
/// query cell, row-major.
pub fn reference_points(wq: usize, hq: usize) -> Vec<[f64; 2]> {
    (0..wq * hq)
        .map(|k| [((k % wq) as f64 + 0.5) / wq as f64, ((k / wq) as f64 + 0.5) / hq as f64])
        .collect()
}

/// Flattened grid queries with their reference points.
#[derive(Debug, Clone)]
pub struct QuerySet {
    pub x_q: Var,
    pub reference_points: Vec<[f64; 2]>,
    pub grid: (usize, usize),
}

/// Non-parametric anchor queries: a 1×1 convolution of the stride-16
/// stereo feature, flattened row-major.
#[derive(Debug, Clone)]
pub struct NpaQuery {
    proj: Conv2d,
}

impl NpaQuery {
    pub fn new<T: Element>(pb: &mut ParamBuilder<'_, T>, c_in: usize, c_dec: usize) -> Result<Self> {
        Ok(NpaQuery { proj: Conv2d::new(&mut pb.sub("query"), "proj", c_in, c_dec, 1, 1, true)? })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, feature: Var) -> Result<QuerySet> {
        let x = self.proj.forward(g, feature)?;
        let s = g.shape(x).to_vec();
        let x_q = g.reshape(x, &[s[0] * s[1], s[2]])?;
        Ok(QuerySet { x_q, reference_points: reference_points(s[1], s[0]), grid: (s[1], s[0]) })
    }
}

/// Adds the flattened positional encoding to the queries.
pub fn add_dape<T: Element>(g: &mut Graph<'_, T>, x_q: Var, pe: Option<Var>) -> Result<Var> {
    match pe {
        Some(pe) => g.add(x_q, pe),
        None => Ok(x_q),
    }
}

/// Row-softmax attention probabilities `[M, N, N]` of `[N, C]` queries and
/// keys split into `heads` heads, scaled by `1/√(C/M)`.
pub fn attention_probs<T: Element>(q: &Tensor<T>, k: &Tensor<T>, heads: usize) -> Result<Tensor<T>> {
    let (n, c) = (q.shape()[0], q.shape()[1]);
    let dh = c / heads;
    let mut probs = vec![T::zero(); heads * n * n];
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut qh = vec![T::zero(); n * dh];
    let mut kh = vec![T::zero(); n * dh];
    let mut s = vec![T::zero(); n * n];
    for h in 0..heads {
        gather_head(q.data(), c, h * dh, dh, &mut qh);
        gather_head(k.data(), c, h * dh, dh, &mut kh);
        s.iter_mut().for_each(|v| *v = T::zero());
        gemm_nt(n, dh, n, &qh, &kh, &mut s);
        s.iter_mut().for_each(|v| *v *= scale);
        softmax_into(&s, &mut probs[h * n * n..(h + 1) * n * n], n, n, 1);
    }
    Tensor::new(&[heads, n, n], probs)
}

fn gather_head<T: Copy>(x: &[T], c: usize, start: usize, dh: usize, out: &mut [T]) {
    for (row, dst) in x.chunks_exact(c).zip(out.chunks_exact_mut(dh)) {
        dst.copy_from_slice(&row[start..start + dh]);
    }
}

fn scatter_head_add<T: Element>(src: &[T], c: usize, start: usize, dh: usize, out: &mut [T]) {
    for (s, row) in src.chunks_exact(dh).zip(out.chunks_exact_mut(c)) {
        for (d, &v) in row[start..start + dh].iter_mut().zip(s) {
            *d += v;
        }
    }
}

struct AttentionBack<T> {
    n: usize,
    c: usize,
    heads: usize,
    probs: Tensor<T>,
}

impl<T: Element> Backward<T> for AttentionBack<T> {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let (n, c, heads) = (self.n, self.c, self.heads);
        let dh = c / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let (q, k, v) = (ctx.input(0).data(), ctx.input(1).data(), ctx.input(2).data());
        let og = ctx.out_grad;
        let mut dq = vec![T::zero(); n * c];
        let mut dk = vec![T::zero(); n * c];
        let mut dv = vec![T::zero(); n * c];
        let mut buf = [vec![T::zero(); n * dh], vec![T::zero(); n * dh], vec![T::zero(); n * dh], vec![T::zero(); n * dh]];
        let mut da = vec![T::zero(); n * n];
        let mut tmp = vec![T::zero(); n * dh];
        for h in 0..heads {
            let a = &self.probs.data()[h * n * n..(h + 1) * n * n];
            let [qh, kh, vh, gh] = &mut buf;
            gather_head(q, c, h * dh, dh, qh);
            gather_head(k, c, h * dh, dh, kh);
            gather_head(v, c, h * dh, dh, vh);
            gather_head(og, c, h * dh, dh, gh);
            tmp.iter_mut().for_each(|x| *x = T::zero());
            gemm_tn(n, n, dh, a, gh, &mut tmp);
            scatter_head_add(&tmp, c, h * dh, dh, &mut dv);
            da.iter_mut().for_each(|x| *x = T::zero());
            gemm_nt(n, dh, n, gh, vh, &mut da);
            for i in 0..n {
                let (ar, dr) = (&a[i * n..(i + 1) * n], &mut da[i * n..(i + 1) * n]);
                let dot: T = ar.iter().zip(dr.iter()).map(|(&x, &y)| x * y).sum();
                for (d, &p) in dr.iter_mut().zip(ar) {
                    *d = p * (*d - dot) * scale;
                }
            }
            tmp.iter_mut().for_each(|x| *x = T::zero());
            gemm_nn(n, n, dh, &da, kh, &mut tmp);
            scatter_head_add(&tmp, c, h * dh, dh, &mut dq);
            tmp.iter_mut().for_each(|x| *x = T::zero());
            gemm_tn(n, n, dh, &da, qh, &mut tmp);
            scatter_head_add(&tmp, c, h * dh, dh, &mut dk);
        }
        ctx.accumulate(0, &dq);
        ctx.accumulate(1, &dk);
        ctx.accumulate(2, &dv);
    }
}

/// Scaled dot-product attention over `[N, C]` projections, `heads` heads.
pub fn attention<T: Element>(g: &mut Graph<'_, T>, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
    let s = g.shape(q).to_vec();
    if s.len() != 2 || g.shape(k) != s.as_slice() || g.shape(v) != s.as_slice() {
        return Err(Error::shape(
            "attention",
            format!("q {:?}, k {:?}, v {:?} must be equal [N, C]", s, g.shape(k), g.shape(v)),
        ));
    }
    let (n, c) = (s[0], s[1]);
    if heads == 0 || c % heads != 0 {
        return Err(Error::config(format!("C_dec={c} must be divisible by the head count M={heads}")));
    }
    let dh = c / heads;
    let probs = attention_probs(g.value(q), g.value(k), heads)?;
    let vals = g.value(v).data();
    let mut out = vec![T::zero(); n * c];
    let mut vh = vec![T::zero(); n * dh];
    let mut oh = vec![T::zero(); n * dh];
    for h in 0..heads {
        gather_head(vals, c, h * dh, dh, &mut vh);
        oh.iter_mut().for_each(|x| *x = T::zero());
        gemm_nn(n, n, dh, &probs.data()[h * n * n..(h + 1) * n * n], &vh, &mut oh);
        scatter_head_add(&oh, c, h * dh, dh, &mut out);
    }
    let out = Tensor::new(&[n, c], out)?;
    Ok(g.push(out, &[q, k, v], AttentionBack { n, c, heads, probs }, "attention"))
}

#[derive(Debug, Clone)]
pub struct MultiHeadSelfAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    pub heads: usize,
}

impl MultiHeadSelfAttention {
    pub fn new<T: Element>(pb: &mut ParamBuilder<'_, T>, name: &str, c: usize, heads: usize) -> Result<Self> {
        if heads == 0 || c % heads != 0 {
            return Err(Error::config(format!("C_dec={c} must be divisible by the head count M={heads}")));
        }
        let mut p = pb.sub(name);
        Ok(MultiHeadSelfAttention {
            q: Linear::new(&mut p, "q", c, c)?,
            k: Linear::new(&mut p, "k", c, c)?,
            v: Linear::new(&mut p, "v", c, c)?,
            out: Linear::new(&mut p, "out", c, c)?,
            heads,
        })
    }

    /// Queries and keys come from `qk` (queries plus encoding), values from `x`.
    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, qk: Var, x: Var) -> Result<Var> {
        let q = self.q.forward(g, qk)?;
        let k = self.k.forward(g, qk)?;
        let v = self.v.forward(g, x)?;
        let o = attention(g, q, k, v, self.heads)?;
        self.out.forward(g, o)
    }

    /// Attention probabilities `[M, N, N]` the layer would use for `qk`.
    pub fn probabilities<T: Element>(&self, g: &mut Graph<'_, T>, qk: Var) -> Result<Tensor<T>> {
        let q = self.q.forward(g, qk)?;
        let k = self.k.forward(g, qk)?;
        attention_probs(g.value(q), g.value(k), self.heads)
    }
}

/// Geometry of a deformable sampling pass.
#[derive(Debug, Clone)]
pub struct DeformLayout {
    pub heads: usize,
    pub points: usize,
    /// `(H_l, W_l)` of every level.
    pub levels: Vec<(usize, usize)>,
}

impl DeformLayout {
    fn per_query(&self) -> usize {
        self.heads * self.levels.len() * self.points
    }
}

/// Pixel coordinate on level `(h, w)` of normalised reference `r` plus a
/// pixel offset: `(r·[W, H] − 0.5) + offset`.
#[inline]
fn sample_coord<T: Element>(r: [f64; 2], h: usize, w: usize, off: (T, T)) -> (T, T) {
    (T::of(r[0] * w as f64 - 0.5) + off.0, T::of(r[1] * h as f64 - 0.5) + off.1)
}

struct DeformBack {
    layout: DeformLayout,
    refs: Vec<[f64; 2]>,
    c: usize,
}

impl<T: Element> Backward<T> for DeformBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>) {
        let lay = &self.layout;
        let (c, nl) = (self.c, lay.levels.len());
        let dh = c / lay.heads;
        let og = ctx.out_grad;
        let offsets = ctx.input(nl).data();
        let weights = ctx.input(nl + 1).data();
        let mut d_off = vec![T::zero(); offsets.len()];
        let mut d_w = vec![T::zero(); weights.len()];
        let mut d_vals: Vec<Vec<T>> = (0..nl).map(|l| vec![T::zero(); ctx.input(l).numel()]).collect();
        let per_q = lay.per_query();
        for (q, &r) in self.refs.iter().enumerate() {
            for m in 0..lay.heads {
                let g = &og[q * c + m * dh..q * c + (m + 1) * dh];
                for (l, &(h, w)) in lay.levels.iter().enumerate() {
                    let vals = ctx.input(l).data();
                    for k in 0..lay.points {
                        let j = (m * nl + l) * lay.points + k;
                        let oi = 2 * (q * per_q + j);
                        let wi = q * per_q + j;
                        let (u, v) = sample_coord(r, h, w, (offsets[oi], offsets[oi + 1]));
                        let t = taps(h, w, u, v);
                        let a = weights[wi];
                        for tap in 0..4 {
                            let Some(p) = t.idx[tap] else { continue };
                            let f = &vals[p * c + m * dh..p * c + (m + 1) * dh];
                            let dot: T = g.iter().zip(f).map(|(&x, &y)| x * y).sum();
                            d_w[wi] += dot * t.w[tap];
                            d_off[oi] += a * dot * t.dwdu[tap];
                            d_off[oi + 1] += a * dot * t.dwdv[tap];
                            let dv = &mut d_vals[l][p * c + m * dh..p * c + (m + 1) * dh];
                            let s = a * t.w[tap];
                            for (d, &x) in dv.iter_mut().zip(g) {
                                *d += s * x;
                            }
                        }
                    }
                }
            }
        }
        for (l, dv) in d_vals.iter().enumerate() {
            ctx.accumulate(l, dv);
        }
        ctx.accumulate(nl, &d_off);
        ctx.accumulate(nl + 1, &d_w);
    }
}

/// Multi-scale deformable sampling. `values[l]` is `[H_l, W_l, C]`,
/// `offsets` is `[Nq, M·L·K·2]` in level pixels and `weights` is
/// `[Nq, M·L·K]`, already normalised per query and head. Head `m` reads
/// channels `m·C/M..(m+1)·C/M` and writes the same slice of the `[Nq, C]`
/// output.
pub fn deformable_sample<T: Element>(
    g: &mut Graph<'_, T>,
    values: &[Var],
    offsets: Var,
    weights: Var,
    refs: &[[f64; 2]],
    heads: usize,
    points: usize,
) -> Result<Var> {
    let nq = refs.len();
    let c = g.shape(values[0]).last().copied().unwrap_or(0);
    let mut levels = Vec::with_capacity(values.len());
    for &v in values {
        let s = g.shape(v);
        if s.len() != 3 || s[2] != c {
            return Err(Error::config(format!("every value level must be [H, W, {c}], got {s:?}")));
        }
        levels.push((s[0], s[1]));
    }
    if heads == 0 || c % heads != 0 {
        return Err(Error::config(format!("C_dec={c} must be divisible by the head count M={heads}")));
    }
    let layout = DeformLayout { heads, points, levels };
    let per_q = layout.per_query();
    if g.shape(offsets) != [nq, 2 * per_q] || g.shape(weights) != [nq, per_q] {
        return Err(Error::shape(
            "deformable_sample",
            format!("offsets {:?} and weights {:?} must be [{nq}, {}] and [{nq}, {per_q}]", g.shape(offsets), g.shape(weights), 2 * per_q),
        ));
    }
    let dh = c / heads;
    let nl = values.len();
    let mut out = vec![T::zero(); nq * c];
    let (off, wts) = (g.value(offsets).data(), g.value(weights).data());
    for (q, &r) in refs.iter().enumerate() {
        for m in 0..heads {
            let o = &mut out[q * c + m * dh..q * c + (m + 1) * dh];
            for (l, &(h, w)) in layout.levels.iter().enumerate() {
                let vals = g.value(values[l]).data();
                for k in 0..points {
                    let j = (m * nl + l) * points + k;
                    let (u, v) = sample_coord(r, h, w, (off[2 * (q * per_q + j)], off[2 * (q * per_q + j) + 1]));
                    let t = taps(h, w, u, v);
                    let a = wts[q * per_q + j];
                    for tap in 0..4 {
                        let Some(p) = t.idx[tap] else { continue };
                        let s = a * t.w[tap];
                        for (d, &x) in o.iter_mut().zip(&vals[p * c + m * dh..p * c + (m + 1) * dh]) {
                            *d += s * x;
                        }
                    }
                }
            }
        }
    }
    let out = Tensor::new(&[nq, c], out)?;
    let mut inputs: Vec<Var> = values.to_vec();
    inputs.push(offsets);
    inputs.push(weights);
    Ok(g.push(out, &inputs, DeformBack { layout, refs: refs.to_vec(), c }, "deformable_sample"))
}

#[derive(Debug, Clone)]
pub struct DeformableCrossAttention {
    value: Linear,
    offsets: Linear,
    weights: Linear,
    out: Linear,
    pub heads: usize,
    pub levels: usize,
    pub points: usize,
}

impl DeformableCrossAttention {
    pub fn new<T: Element>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        c: usize,
        heads: usize,
        levels: usize,
        points: usize,
    ) -> Result<Self> {
        let mut p = pb.sub(name);
        let n = heads * levels * points;
        Ok(DeformableCrossAttention {
            value: Linear::new(&mut p, "value", c, c)?,
            offsets: Linear::constant(&mut p, "offsets", c, 2 * n, 0.0)?,
            weights: Linear::constant(&mut p, "weights", c, n, 0.0)?,
            out: Linear::new(&mut p, "out", c, c)?,
            heads,
            levels,
            points,
        })
    }

    /// Normalised attention weights `[Nq, M·L·K]` for the query input.
    pub fn attention_weights<T: Element>(&self, g: &mut Graph<'_, T>, query: Var) -> Result<Var> {
        let nq = g.shape(query)[0];
        let logits = self.weights.forward(g, query)?;
        let lk = self.levels * self.points;
        let logits = g.reshape(logits, &[nq, self.heads, lk])?;
        let w = g.softmax(logits, 2)?;
        g.reshape(w, &[nq, self.heads * lk])
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, query: Var, refs: &[[f64; 2]], feats: &[Var]) -> Result<Var> {
        if feats.len() != self.levels {
            return Err(Error::config(format!("{} feature levels given, layer built for {}", feats.len(), self.levels)));
        }
        let c = g.shape(query)[1];
        let mut values = Vec::with_capacity(feats.len());
        for &f in feats {
            if g.shape(f).last() != Some(&c) {
                return Err(Error::config(format!("feature level {:?} must have C_dec={c} channels", g.shape(f))));
            }
            values.push(self.value.forward(g, f)?);
        }
        let offsets = self.offsets.forward(g, query)?;
        let weights = self.attention_weights(g, query)?;
        let sampled = deformable_sample(g, &values, offsets, weights, refs, self.heads, self.points)?;
        self.out.forward(g, sampled)
    }
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadSelfAttention,
    pub cross_attn: DeformableCrossAttention,
    ffn: [Linear; 2],
    norms: [Norm; 3],
}

impl DecoderLayer {
    pub fn new<T: Element>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        c: usize,
        heads: usize,
        levels: usize,
        points: usize,
        ffn_mult: usize,
    ) -> Result<Self> {
        let mut p = pb.sub(name);
        Ok(DecoderLayer {
            self_attn: MultiHeadSelfAttention::new(&mut p, "self_attn", c, heads)?,
            cross_attn: DeformableCrossAttention::new(&mut p, "cross_attn", c, heads, levels, points)?,
            ffn: [Linear::new(&mut p, "ffn.w1", c, ffn_mult * c)?, Linear::new(&mut p, "ffn.w2", ffn_mult * c, c)?],
            norms: [Norm::new(&mut p, "norm1", c)?, Norm::new(&mut p, "norm2", c)?, Norm::new(&mut p, "norm3", c)?],
        })
    }

    /// `Q ← norm(Q + mhsa(Q + PE))`, `Q ← norm(Q + msdeform(Q + PE))`,
    /// `Q ← norm(Q + ffn(Q))`.
    pub fn forward<T: Element>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        pe: Option<Var>,
        refs: &[[f64; 2]],
        feats: &[Var],
    ) -> Result<Var> {
        let qk = add_dape(g, x, pe)?;
        let a = self.self_attn.forward(g, qk, x)?;
        let x = g.add(x, a)?;
        let x = self.norms[0].layer(g, x)?;
        let q = add_dape(g, x, pe)?;
        let a = self.cross_attn.forward(g, q, refs, feats)?;
        let x = g.add(x, a)?;
        let x = self.norms[1].layer(g, x)?;
        let h = self.ffn[0].forward(g, x)?;
        let h = g.relu(h);
        let h = self.ffn[1].forward(g, h)?;
        let x = g.add(x, h)?;
        self.norms[2].layer(g, x)
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub layers: Vec<DecoderLayer>,
}

impl Decoder {
    pub fn new<T: Element>(
        pb: &mut ParamBuilder<'_, T>,
        n_dec: usize,
        c: usize,
        heads: usize,
        levels: usize,
        points: usize,
        ffn_mult: usize,
    ) -> Result<Self> {
        let mut p = pb.sub("decoder");
        let layers = (0..n_dec)
            .map(|i| DecoderLayer::new(&mut p, &format!("layer{i}"), c, heads, levels, points, ffn_mult))
            .collect::<Result<Vec<_>>>()?;
        Ok(Decoder { layers })
    }

    /// Output of every layer in order; empty when there are no layers, in
    /// which case the queries pass through unchanged.
    pub fn forward<T: Element>(
        &self,
        g: &mut Graph<'_, T>,
        queries: &QuerySet,
        pe: Option<Var>,
        feats: &[Var],
    ) -> Result<Vec<Var>> {
        let mut x = queries.x_q;
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            x = layer.forward(g, x, pe, &queries.reference_points, feats)?;
            outs.push(x);
        }
        Ok(outs)
    }
}
