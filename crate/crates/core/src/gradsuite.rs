//! Named finite-difference checks over every differentiable operator, the
//! composite modules and the full training loss. Shared by the test suite
//! and the command-line `gradcheck` tool.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Backbone, UnaryPyramid, UnaryPyramids};
use crate::config::{LossConfig, ModelConfig, PeMode, PyramidVariant};
use crate::decoder::{attention, deformable_sample, query_encoding, reference_points, DecoderLayer, DeformableCrossAttention, MultiHeadSelfAttention};
use crate::detect::{
    build_targets, classification_loss, estimate_priors, layer_loss, orientation_loss, regression_loss, total_loss, Assignment,
    DetectionHeads, DetectionTargets, REG_DIMS,
};
use crate::disphead::{softargmax, stereo_focal_loss, DisparityHead, DisparityMap};
use crate::model::{FrameTargets, Ts3d};
use crate::spfpn::{correlation_cost_volume, Spfpn};
use crate::synth::{render_scene, sample_scene, SceneParams};
use crate::tensor::{check_gradients, GradCheckOptions, GradCheckReport, Graph, ParamBuilder, ParamStore, Tensor, Var};
use crate::{Error, Result};

pub const OP_TOLERANCE: f64 = 1e-6;
pub const COMPOSITE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Modules,
    EndToEnd,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::Ops, Scope::Modules, Scope::EndToEnd];

    pub fn name(self) -> &'static str {
        match self {
            Scope::Ops => "ops",
            Scope::Modules => "modules",
            Scope::EndToEnd => "end2end",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Scope::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn tolerance(self) -> f64 {
        match self {
            Scope::Ops => OP_TOLERANCE,
            Scope::Modules | Scope::EndToEnd => COMPOSITE_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub scope: Scope,
    pub name: &'static str,
    pub report: GradCheckReport,
    pub tolerance: f64,
}

impl CaseOutcome {
    pub fn passed(&self) -> bool {
        self.report.probes > 0 && self.report.max_rel_error < self.tolerance
    }
}

type CaseFn = fn() -> Result<GradCheckReport>;

/// Case names and bodies of a scope, in a fixed order.
pub fn cases(scope: Scope) -> Vec<(&'static str, CaseFn)> {
    match scope {
        Scope::Ops => vec![
            ("add", op_add as CaseFn),
            ("sub", op_sub),
            ("mul", op_mul),
            ("scale", op_scale),
            ("relu", op_relu),
            ("sigmoid", op_sigmoid),
            ("sum", op_sum),
            ("mean", op_mean),
            ("reshape", op_reshape),
            ("transpose", op_transpose),
            ("matmul", op_matmul),
            ("linear", op_linear),
            ("concat", op_concat),
            ("slice", op_slice),
            ("softmax", op_softmax),
            ("conv2d", op_conv2d),
            ("upsample2x", op_upsample),
            ("channel_norm", op_channel_norm),
            ("layer_norm", op_layer_norm),
            ("bilinear_sample", op_bilinear),
            ("correlation_cost_volume", op_correlation),
            ("attention", op_attention),
            ("deformable_sample", op_deformable),
            ("softargmax", op_softargmax),
            ("stereo_focal_loss", op_stereo_focal),
            ("classification_loss", op_classification),
            ("regression_loss", op_regression),
            ("orientation_loss", op_orientation),
        ],
        Scope::Modules => vec![
            ("backbone", mod_backbone as CaseFn),
            ("spfpn", mod_spfpn_forward),
            ("aggregate.spfpn", mod_aggregate_spfpn),
            ("aggregate.topdown_fpn", mod_aggregate_topdown),
            ("aggregate.bifpn_like", mod_aggregate_bifpn),
            ("disparity_head", mod_disparity_head),
            ("dape", mod_dape),
            ("self_attention", mod_self_attention),
            ("deformable_cross_attention", mod_cross_attention),
            ("decoder_layer", mod_decoder_layer),
            ("detection_heads", mod_heads),
            ("loss.classification", mod_loss_cls),
            ("loss.regression", mod_loss_reg),
            ("loss.orientation", mod_loss_orient),
            ("loss.stereo_focal", mod_loss_disp),
            ("loss.total", mod_loss_total),
        ],
        Scope::EndToEnd => vec![("toy_scene", end_to_end as CaseFn)],
    }
}

/// Runs every case of `scope` whose name contains `filter`.
pub fn run(scope: Scope, filter: Option<&str>) -> Result<Vec<CaseOutcome>> {
    let mut out = Vec::new();
    for (name, f) in cases(scope) {
        if filter.is_some_and(|p| !name.contains(p)) {
            continue;
        }
        out.push(CaseOutcome { scope, name, report: f()?, tolerance: scope.tolerance() });
    }
    Ok(out)
}

// ---------------------------------------------------------------- helpers

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rt(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

/// Uniform magnitudes in `[0.1, 1)` with random sign, keeping ReLU kinks
/// out of reach of the difference step.
fn away(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| {
        let m = r.gen_range(0.1..1.0);
        if r.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `Σ x ⊙ R` for a fixed random `R`.
fn wsum(g: &mut Graph<'_, f64>, x: Var, seed: u64) -> Result<Var> {
    let w = g.constant(rt(g.shape(x), seed ^ 0x5bd1_e995));
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

fn wsum_all(g: &mut Graph<'_, f64>, xs: &[Var], seed: u64) -> Result<Var> {
    let mut acc = wsum(g, xs[0], seed)?;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        let s = wsum(g, x, seed + i as u64)?;
        acc = g.add(acc, s)?;
    }
    Ok(acc)
}

fn check<F>(params: &mut ParamStore<f64>, inputs: &mut [Tensor<f64>], probes: Option<usize>, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    check_gradients(params, inputs, &GradCheckOptions { eps: 1e-6, max_probes_per_tensor: probes }, f)
}

fn merge(reports: impl IntoIterator<Item = Result<GradCheckReport>>) -> Result<GradCheckReport> {
    let mut out = GradCheckReport { max_rel_error: 0.0, worst: None, probes: 0 };
    for r in reports {
        let r = r?;
        out.probes += r.probes;
        if out.worst.is_none() || r.max_rel_error > out.max_rel_error {
            out.max_rel_error = r.max_rel_error;
            out.worst = r.worst;
        }
    }
    Ok(out)
}

/// Inputs only, no parameters.
fn check_inputs<F>(inputs: Vec<Tensor<f64>>, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut inputs = inputs;
    check(&mut ParamStore::new(), &mut inputs, None, f)
}

/// Adds uniform noise to every parameter so zero-initialised layers carry
/// gradient and sampling offsets leave the integer lattice.
fn perturb(store: &mut ParamStore<f64>, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v += r.gen_range(-scale..scale);
        }
    }
}

const SHAPES: [&[usize]; 3] = [&[5], &[3, 4], &[2, 3, 4]];

fn binary(seed: u64, op: fn(&mut Graph<'_, f64>, Var, Var) -> Result<Var>) -> Result<GradCheckReport> {
    merge(SHAPES.iter().enumerate().map(|(i, s)| {
        let k = seed + 10 * i as u64;
        check_inputs(vec![rt(s, k), rt(s, k + 1)], |g, v| {
            let y = op(g, v[0], v[1])?;
            wsum(g, y, k)
        })
    }))
}

fn unary(seed: u64, input: fn(&[usize], u64) -> Tensor<f64>, op: fn(&mut Graph<'_, f64>, Var) -> Result<Var>) -> Result<GradCheckReport> {
    merge(SHAPES.iter().enumerate().map(|(i, s)| {
        let k = seed + 10 * i as u64;
        check_inputs(vec![input(s, k)], |g, v| {
            let y = op(g, v[0])?;
            wsum(g, y, k)
        })
    }))
}

// ---------------------------------------------------------------- operators

fn op_add() -> Result<GradCheckReport> {
    binary(1, |g, a, b| g.add(a, b))
}

fn op_sub() -> Result<GradCheckReport> {
    binary(2, |g, a, b| g.sub(a, b))
}

fn op_mul() -> Result<GradCheckReport> {
    binary(3, |g, a, b| g.mul(a, b))
}

fn op_scale() -> Result<GradCheckReport> {
    unary(4, rt, |g, a| Ok(g.scale(a, -1.7)))
}

fn op_relu() -> Result<GradCheckReport> {
    unary(5, away, |g, a| Ok(g.relu(a)))
}

fn op_sigmoid() -> Result<GradCheckReport> {
    unary(6, rt, |g, a| Ok(g.sigmoid(a)))
}

fn op_sum() -> Result<GradCheckReport> {
    // Squared so the gradient depends on the input.
    unary(7, rt, |g, a| {
        let s = g.sum(a);
        g.mul(s, s)
    })
}

fn op_mean() -> Result<GradCheckReport> {
    unary(8, rt, |g, a| {
        let s = g.mean(a);
        g.mul(s, s)
    })
}

fn op_reshape() -> Result<GradCheckReport> {
    let cases: [(&[usize], &[usize]); 3] = [(&[6], &[2, 3]), (&[3, 4], &[12]), (&[2, 3, 4], &[4, 6])];
    merge(cases.iter().enumerate().map(|(i, (from, to))| {
        let k = 20 + i as u64;
        check_inputs(vec![rt(from, k)], |g, v| {
            let y = g.reshape(v[0], to)?;
            wsum(g, y, k)
        })
    }))
}

fn op_transpose() -> Result<GradCheckReport> {
    let shapes: [&[usize]; 3] = [&[3, 4], &[1, 5], &[6, 2]];
    merge(shapes.iter().enumerate().map(|(i, s)| {
        let k = 30 + i as u64;
        check_inputs(vec![rt(s, k)], |g, v| {
            let y = g.transpose(v[0])?;
            wsum(g, y, k)
        })
    }))
}

fn op_matmul() -> Result<GradCheckReport> {
    let dims = [(2, 3, 4), (1, 5, 1), (4, 4, 2)];
    merge(dims.iter().enumerate().map(|(i, &(m, k, n))| {
        let s = 40 + 10 * i as u64;
        check_inputs(vec![rt(&[m, k], s), rt(&[k, n], s + 1)], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            wsum(g, y, s)
        })
    }))
}

fn op_linear() -> Result<GradCheckReport> {
    let cases: [(&[usize], usize, bool); 3] = [(&[5, 3], 4, true), (&[2, 3, 3], 2, false), (&[1, 6], 1, true)];
    merge(cases.iter().enumerate().map(|(i, &(xs, dout, bias))| {
        let s = 70 + 10 * i as u64;
        let din = *xs.last().unwrap_or(&1);
        let mut inputs = vec![rt(xs, s), rt(&[din, dout], s + 1)];
        if bias {
            inputs.push(rt(&[dout], s + 2));
        }
        check_inputs(inputs, |g, v| {
            let y = g.linear(v[0], v[1], v.get(2).copied())?;
            wsum(g, y, s)
        })
    }))
}

fn op_concat() -> Result<GradCheckReport> {
    let cases: [(&[&[usize]], usize); 3] =
        [(&[&[2, 3], &[1, 3]], 0), (&[&[2, 3], &[2, 2], &[2, 1]], 1), (&[&[2, 2, 1], &[2, 2, 3]], 2)];
    merge(cases.iter().enumerate().map(|(i, &(parts, axis))| {
        let s = 100 + 10 * i as u64;
        let inputs = parts.iter().enumerate().map(|(j, p)| rt(p, s + j as u64)).collect();
        check_inputs(inputs, |g, v| {
            let y = g.concat(v, axis)?;
            wsum(g, y, s)
        })
    }))
}

fn op_slice() -> Result<GradCheckReport> {
    let cases: [(&[usize], usize, usize, usize); 3] = [(&[5], 0, 1, 3), (&[3, 4], 1, 2, 2), (&[2, 3, 4], 2, 0, 3)];
    merge(cases.iter().enumerate().map(|(i, &(shape, axis, start, len))| {
        let s = 130 + i as u64;
        check_inputs(vec![rt(shape, s)], |g, v| {
            let y = g.slice(v[0], axis, start, len)?;
            wsum(g, y, s)
        })
    }))
}

fn op_softmax() -> Result<GradCheckReport> {
    let cases: [(&[usize], usize); 3] = [(&[5], 0), (&[3, 4], 1), (&[2, 3, 4], 1)];
    merge(cases.iter().enumerate().map(|(i, &(shape, axis))| {
        let s = 140 + i as u64;
        check_inputs(vec![rt(shape, s)], |g, v| {
            let y = g.softmax(v[0], axis)?;
            wsum(g, y, s)
        })
    }))
}

fn op_conv2d() -> Result<GradCheckReport> {
    // (input, kernel, bias, stride, padding)
    let cases: [(&[usize], &[usize], bool, usize, usize); 3] = [
        (&[5, 6, 2], &[3, 3, 2, 3], true, 1, 1),
        (&[7, 5, 3], &[3, 3, 3, 2], false, 2, 1),
        (&[4, 4, 3], &[1, 1, 3, 2], true, 1, 0),
    ];
    merge(cases.iter().enumerate().map(|(i, &(xs, ks, bias, stride, pad))| {
        let s = 150 + 10 * i as u64;
        let mut inputs = vec![rt(xs, s), rt(ks, s + 1)];
        if bias {
            inputs.push(rt(&[ks[3]], s + 2));
        }
        check_inputs(inputs, |g, v| {
            let y = g.conv2d(v[0], v[1], v.get(2).copied(), stride, pad)?;
            wsum(g, y, s)
        })
    }))
}

fn op_upsample() -> Result<GradCheckReport> {
    let shapes: [&[usize]; 3] = [&[2, 3, 2], &[1, 1, 1], &[3, 2, 4]];
    merge(shapes.iter().enumerate().map(|(i, s)| {
        let k = 180 + i as u64;
        check_inputs(vec![rt(s, k)], |g, v| {
            let y = g.upsample2x(v[0])?;
            wsum(g, y, k)
        })
    }))
}

fn norm_case(seed: u64, shapes: [&[usize]; 3], by_channel: bool) -> Result<GradCheckReport> {
    merge(shapes.iter().enumerate().map(|(i, s)| {
        let k = seed + 10 * i as u64;
        let c = *s.last().unwrap_or(&1);
        check_inputs(vec![rt(s, k), rt(&[c], k + 1), rt(&[c], k + 2)], |g, v| {
            let y = if by_channel { g.channel_norm(v[0], v[1], v[2])? } else { g.layer_norm(v[0], v[1], v[2])? };
            wsum(g, y, k)
        })
    }))
}

fn op_channel_norm() -> Result<GradCheckReport> {
    norm_case(190, [&[3, 4, 2], &[2, 2, 5], &[5, 1, 3]], true)
}

fn op_layer_norm() -> Result<GradCheckReport> {
    norm_case(220, [&[4, 3], &[2, 6], &[2, 3, 4]], false)
}

/// Sample points whose coordinates stay at least 0.1 from integers, some
/// of them outside the map.
fn off_lattice_points(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let mut coord = |extent: usize| {
        let base = r.gen_range(-2..extent as i64 + 1) as f64;
        base + r.gen_range(0.1..0.9)
    };
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        data.push(coord(w));
        data.push(coord(h));
    }
    Tensor::new(&[n, 2], data).expect("two coordinates per point")
}

fn op_bilinear() -> Result<GradCheckReport> {
    let cases = [(4, 5, 3, 7), (1, 3, 2, 4), (6, 2, 1, 9)];
    merge(cases.iter().enumerate().map(|(i, &(h, w, c, n))| {
        let s = 250 + 10 * i as u64;
        check_inputs(vec![rt(&[h, w, c], s), off_lattice_points(n, h, w, s + 1)], |g, v| {
            let y = g.bilinear_sample(v[0], v[1])?;
            wsum(g, y, s)
        })
    }))
}

fn op_correlation() -> Result<GradCheckReport> {
    // The last case has more bins than columns.
    let cases = [(3, 6, 2, 3), (2, 4, 3, 1), (2, 3, 2, 5)];
    merge(cases.iter().enumerate().map(|(i, &(h, w, c, d))| {
        let s = 280 + 10 * i as u64;
        check_inputs(vec![rt(&[h, w, c], s), rt(&[h, w, c], s + 1)], move |g, v| {
            let y = correlation_cost_volume(g, v[0], v[1], d)?;
            wsum(g, y, s)
        })
    }))
}

fn op_attention() -> Result<GradCheckReport> {
    let cases = [(4, 4, 1), (5, 6, 3), (3, 8, 4)];
    merge(cases.iter().enumerate().map(|(i, &(n, c, heads))| {
        let s = 310 + 10 * i as u64;
        check_inputs(vec![rt(&[n, c], s), rt(&[n, c], s + 1), rt(&[n, c], s + 2)], move |g, v| {
            let y = attention(g, v[0], v[1], v[2], heads)?;
            wsum(g, y, s)
        })
    }))
}

fn random_refs(n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut r = rng(seed);
    (0..n).map(|_| [r.gen_range(0.05..0.95), r.gen_range(0.05..0.95)]).collect()
}

fn op_deformable() -> Result<GradCheckReport> {
    // (levels as (H, W), C, heads, points, queries)
    let cases: [(&[(usize, usize)], usize, usize, usize, usize); 3] = [
        (&[(4, 6)], 4, 1, 2, 3),
        (&[(4, 6), (2, 3)], 4, 2, 1, 4),
        (&[(8, 8), (4, 4), (2, 2)], 6, 3, 2, 2),
    ];
    merge(cases.iter().enumerate().map(|(i, &(levels, c, heads, points, nq))| {
        let s = 340 + 10 * i as u64;
        let nl = levels.len();
        let per_q = heads * nl * points;
        let mut inputs: Vec<Tensor<f64>> = levels.iter().enumerate().map(|(l, &(h, w))| rt(&[h, w, c], s + l as u64)).collect();
        inputs.push(rt(&[nq, 2 * per_q], s + 5).map(|v| 1.5 * v));
        inputs.push(rt(&[nq, per_q], s + 6));
        let refs = random_refs(nq, s + 7);
        check_inputs(inputs, move |g, v| {
            let y = deformable_sample(g, &v[..nl], v[nl], v[nl + 1], &refs, heads, points)?;
            wsum(g, y, s)
        })
    }))
}

fn op_softargmax() -> Result<GradCheckReport> {
    let shapes: [&[usize]; 3] = [&[6], &[3, 5], &[2, 2, 4]];
    merge(shapes.iter().enumerate().map(|(i, shape)| {
        let s = 370 + i as u64;
        check_inputs(vec![rt(shape, s)], |g, v| {
            let y = softargmax(g, v[0])?;
            if g.shape(y).is_empty() {
                Ok(g.mul(y, y)?)
            } else {
                wsum(g, y, s)
            }
        })
    }))
}

fn op_stereo_focal() -> Result<GradCheckReport> {
    let cases = [(2, 3, 5), (1, 4, 8), (3, 2, 3)];
    merge(cases.iter().enumerate().map(|(i, &(h, w, d))| {
        let s = 380 + i as u64;
        let mut r = rng(s);
        let target: Vec<f32> = (0..h * w).map(|_| r.gen_range(0.0..(d - 1) as f32)).collect();
        let valid: Vec<bool> = (0..h * w).map(|k| k == 0 || r.gen_bool(0.7)).collect();
        check_inputs(vec![rt(&[h, w, d], s).map(|v| 3.0 * v)], move |g, v| {
            Ok(stereo_focal_loss(g, v[0], &target, &valid, 0.5)?.loss)
        })
    }))
}

fn random_targets(n: usize, num_classes: usize, seed: u64) -> DetectionTargets {
    let mut r = rng(seed);
    let assignments = (0..n)
        .map(|i| match i % 3 {
            0 => Assignment::Positive { gt: 0, class: r.gen_range(0..num_classes) },
            1 => Assignment::Negative,
            _ if r.gen_bool(0.5) => Assignment::Ignore,
            _ => Assignment::Negative,
        })
        .collect::<Vec<_>>();
    let reg = assignments
        .iter()
        .map(|a| {
            let mut t = [0.0; REG_DIMS];
            if a.is_positive() {
                for v in t.iter_mut().take(12) {
                    *v = r.gen_range(-1.0..1.0);
                }
                t[12] = f64::from(u8::from(r.gen_bool(0.5)));
            }
            t
        })
        .collect();
    DetectionTargets { assignments, reg, num_objects: 2 }
}

fn op_classification() -> Result<GradCheckReport> {
    let cases = [(6, 2), (9, 1), (4, 3)];
    merge(cases.iter().enumerate().map(|(i, &(n, k))| {
        let s = 400 + i as u64;
        let targets = random_targets(n, k, s);
        let cfg = LossConfig::default();
        check_inputs(vec![rt(&[n, k + 1], s).map(|v| 3.0 * v)], move |g, v| classification_loss(g, v[0], &targets, &cfg))
    }))
}

fn op_regression() -> Result<GradCheckReport> {
    merge([6usize, 3, 9].iter().enumerate().map(|(i, &n)| {
        let s = 410 + i as u64;
        let targets = random_targets(n, 2, s);
        check_inputs(vec![rt(&[n, REG_DIMS], s).map(|v| 1.5 * v)], move |g, v| regression_loss(g, v[0], &targets, 0.04))
    }))
}

fn op_orientation() -> Result<GradCheckReport> {
    merge([6usize, 3, 9].iter().enumerate().map(|(i, &n)| {
        let s = 420 + i as u64;
        let targets = random_targets(n, 2, s);
        check_inputs(vec![rt(&[n, REG_DIMS], s).map(|v| 3.0 * v)], move |g, v| orientation_loss(g, v[0], &targets))
    }))
}

// ---------------------------------------------------------------- modules

const MODULE_PROBES: Option<usize> = Some(6);

fn tiny_config(pyramid: PyramidVariant) -> ModelConfig {
    ModelConfig {
        width: 64,
        height: 32,
        bins: [4, 4, 3],
        backbone_channels: 4,
        blocks_per_stage: 1,
        c_dec: 8,
        c_disp: 4,
        n_dec: 2,
        heads: 2,
        points: 1,
        ffn_mult: 1,
        num_classes: 2,
        anchor_scales: vec![16.0],
        anchor_ratios: vec![1.5],
        pyramid,
        pe: PeMode::Dape,
        intermediate_supervision: true,
    }
}

fn build<M>(seed: u64, f: impl FnOnce(&mut ParamBuilder<'_, f64>) -> Result<M>) -> Result<(M, ParamStore<f64>)> {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let m = f(&mut ParamBuilder::new(&mut store, &mut r))?;
    perturb(&mut store, seed + 1, 0.2);
    Ok((m, store))
}

fn mod_backbone() -> Result<GradCheckReport> {
    let (bb, mut store) = build(500, |pb| Backbone::new(pb, 4, 1))?;
    let mut inputs = vec![rt(&[32, 32, 3], 501)];
    check(&mut store, &mut inputs, MODULE_PROBES, |g, v| {
        let p = bb.forward(g, v[0])?;
        let mut all: Vec<Var> = p.primary.to_vec();
        all.extend(p.enhanced);
        wsum_all(g, &all, 502)
    })
}

fn pyramid_inputs(seed: u64, c: usize) -> Vec<Tensor<f64>> {
    let extents = [(8, 16), (4, 8), (2, 4)];
    (0..12).map(|i| {
        let (h, w) = extents[i % 3];
        rt(&[h, w, c], seed + i as u64)
    })
    .collect()
}

fn as_pyramids(v: &[Var]) -> UnaryPyramids {
    let level = |o: usize| [v[o], v[o + 1], v[o + 2]];
    UnaryPyramids {
        left: UnaryPyramid { primary: level(0), enhanced: level(3) },
        right: UnaryPyramid { primary: level(6), enhanced: level(9) },
    }
}

fn mod_spfpn_forward() -> Result<GradCheckReport> {
    let cfg = tiny_config(PyramidVariant::Spfpn);
    let (spfpn, mut store) = build(510, |pb| Spfpn::new(pb, &cfg))?;
    let mut inputs = pyramid_inputs(511, 3);
    check(&mut store, &mut inputs, MODULE_PROBES, |g, v| {
        let p = spfpn.forward(g, &as_pyramids(v))?;
        let mut all = p.projected.to_vec();
        all.push(p.aggregated[2]);
        wsum_all(g, &all, 512)
    })
}

fn aggregate(pyramid: PyramidVariant, seed: u64) -> Result<GradCheckReport> {
    let cfg = tiny_config(pyramid);
    let (spfpn, mut store) = build(seed, |pb| Spfpn::new(pb, &cfg))?;
    let extents = [(8, 16), (4, 8), (2, 4)];
    let mut inputs: Vec<Tensor<f64>> = (0..3).map(|l| rt(&[extents[l].0, extents[l].1, cfg.bins[l]], seed + 1 + l as u64)).collect();
    check(&mut store, &mut inputs, MODULE_PROBES, |g, v| {
        let agg = spfpn.cross_scale_aggregate(g, v)?;
        let proj = spfpn.project_scales(g, &agg)?;
        wsum_all(g, &proj, seed + 9)
    })
}

fn mod_aggregate_spfpn() -> Result<GradCheckReport> {
    aggregate(PyramidVariant::Spfpn, 520)
}

fn mod_aggregate_topdown() -> Result<GradCheckReport> {
    aggregate(PyramidVariant::TopdownFpn, 530)
}

fn mod_aggregate_bifpn() -> Result<GradCheckReport> {
    aggregate(PyramidVariant::BifpnLike, 540)
}

fn mod_disparity_head() -> Result<GradCheckReport> {
    let (head, mut store) = build(550, |pb| DisparityHead::new(pb, 6, 8, 4))?;
    let mut inputs = vec![rt(&[2, 4, 6], 551)];
    check(&mut store, &mut inputs, MODULE_PROBES, |g, v| {
        let f = head.forward(g, v[0])?;
        wsum_all(g, &[f.logits_q, f.logits_sup], 552)
    })
}

fn mod_dape() -> Result<GradCheckReport> {
    let mut inputs = vec![rt(&[2, 4, 4], 560).map(|v| 2.0 * v)];
    check(&mut ParamStore::new(), &mut inputs, None, |g, v| {
        let pe = query_encoding(g, PeMode::Dape, v[0], 8)?.ok_or(Error::config("dape yields an encoding"))?;
        let sq = g.mul(pe, pe)?;
        wsum(g, sq, 561)
    })
}

fn mod_self_attention() -> Result<GradCheckReport> {
    let (mhsa, mut store) = build(570, |pb| MultiHeadSelfAttention::new(pb, "attn", 8, 2))?;
    let mut inputs = vec![rt(&[6, 8], 571), rt(&[6, 8], 572)];
    check(&mut store, &mut inputs, MODULE_PROBES, |g, v| {
        let y = mhsa.forward(g, v[0], v[1])?;
        wsum(g, y, 573)
    })
}

fn decoder_feats(seed: u64, c: usize) -> Vec<Tensor<f64>> {
    [(8, 16), (4, 8), (2, 4)].iter().enumerate().map(|(l, &(h, w))| rt(&[h, w, c], seed + l as u64)).collect()
}

fn mod_cross_attention() -> Result<GradCheckReport> {
    let (ca, mut store) = build(580, |pb| DeformableCrossAttention::new(pb, "cross", 8, 2, 3, 2))?;
    let mut inputs = vec![rt(&[8, 8], 581)];
    inputs.extend(decoder_feats(582, 8));
    let refs = reference_points(4, 2);
    check(&mut store, &mut inputs, MODULE_PROBES, |g, v| {
        let y = ca.forward(g, v[0], &refs, &v[1..])?;
        wsum(g, y, 589)
    })
}

fn mod_decoder_layer() -> Result<GradCheckReport> {
    let (layer, mut store) = build(590, |pb| DecoderLayer::new(pb, "layer0", 8, 2, 3, 2, 2))?;
    let mut inputs = vec![rt(&[8, 8], 591), rt(&[8, 8], 592)];
    inputs.extend(decoder_feats(593, 8));
    let refs = reference_points(4, 2);
    check(&mut store, &mut inputs, MODULE_PROBES, |g, v| {
        let y = layer.forward(g, v[0], Some(v[1]), &refs, &v[2..])?;
        wsum(g, y, 599)
    })
}

fn mod_heads() -> Result<GradCheckReport> {
    let (heads, mut store) = build(600, |pb| DetectionHeads::new(pb, 8, 2, 2))?;
    let mut inputs = vec![rt(&[4, 8], 601)];
    check(&mut store, &mut inputs, MODULE_PROBES, |g, v| {
        let (c, r) = heads.forward(g, v[0])?;
        wsum_all(g, &[c, r], 602)
    })
}

/// Head outputs of random queries against random targets; `pick` selects
/// the loss term under test.
fn head_loss(seed: u64, pick: fn(&mut Graph<'_, f64>, Var, Var, &DetectionTargets) -> Result<Var>) -> Result<GradCheckReport> {
    let (heads, mut store) = build(seed, |pb| DetectionHeads::new(pb, 8, 1, 2))?;
    let targets = random_targets(6, 2, seed + 1);
    let mut inputs = vec![rt(&[6, 8], seed + 2)];
    check(&mut store, &mut inputs, MODULE_PROBES, |g, v| {
        let (c, r) = heads.forward(g, v[0])?;
        pick(g, c, r, &targets)
    })
}

fn mod_loss_cls() -> Result<GradCheckReport> {
    head_loss(610, |g, c, _, t| classification_loss(g, c, t, &LossConfig::default()))
}

fn mod_loss_reg() -> Result<GradCheckReport> {
    head_loss(620, |g, _, r, t| regression_loss(g, r, t, LossConfig::default().smooth_l1_beta))
}

fn mod_loss_orient() -> Result<GradCheckReport> {
    head_loss(630, |g, _, r, t| orientation_loss(g, r, t))
}

fn mod_loss_disp() -> Result<GradCheckReport> {
    let (head, mut store) = build(640, |pb| DisparityHead::new(pb, 6, 8, 4))?;
    let mut r = rng(641);
    let target: Vec<f32> = (0..8 * 16).map(|_| r.gen_range(0.0..3.0)).collect();
    let valid: Vec<bool> = (0..8 * 16).map(|_| r.gen_bool(0.8)).collect();
    let mut inputs = vec![rt(&[2, 4, 6], 642)];
    check(&mut store, &mut inputs, MODULE_PROBES, |g, v| {
        let f = head.forward(g, v[0])?;
        Ok(stereo_focal_loss(g, f.logits_sup, &target, &valid, 0.5)?.loss)
    })
}

fn mod_loss_total() -> Result<GradCheckReport> {
    let (heads, mut store) = build(650, |pb| DetectionHeads::new(pb, 8, 1, 2))?;
    let targets = random_targets(6, 2, 651);
    let mut r = rng(652);
    let target: Vec<f32> = (0..6).map(|_| r.gen_range(0.0..3.0)).collect();
    let valid = vec![true; 6];
    let mut inputs = vec![rt(&[6, 8], 653), rt(&[6, 8], 654), rt(&[2, 3, 4], 655)];
    let cfg = LossConfig::default();
    check(&mut store, &mut inputs, MODULE_PROBES, |g, v| {
        let mut layers = Vec::new();
        for &q in &v[..2] {
            let (c, r) = heads.forward(g, q)?;
            layers.push(layer_loss(g, c, r, &targets, &cfg)?);
        }
        let disp = stereo_focal_loss(g, v[2], &target, &valid, cfg.disp_sigma)?.loss;
        total_loss(g, &layers, Some(disp), targets.num_objects, cfg.disp_weight)
    })
}

// ---------------------------------------------------------------- end to end

/// Two-object scene at 64×32 with disparities inside the toy bin range.
pub fn toy_scene_params() -> SceneParams {
    SceneParams {
        width: 64,
        height: 32,
        focal: 40.0,
        baseline: 0.3,
        camera_height: 1.65,
        min_depth: 4.0,
        max_depth: 9.0,
        min_objects: 2,
        max_objects: 2,
        pedestrian_fraction: 0.5,
        free_yaw: false,
        texture_scale: 0.12,
        wall_depth: 40.0,
    }
}

/// Smallest valid model that still exercises every component.
pub fn toy_config() -> ModelConfig {
    tiny_config(PyramidVariant::Spfpn)
}

fn end_to_end() -> Result<GradCheckReport> {
    let params = toy_scene_params();
    let rendered = (0..64u64)
        .map(|seed| render_scene(&sample_scene(seed, &params), &params))
        .find(|r| r.frame.labels.len() == 2)
        .ok_or(Error::config("no two-object toy scene among the first 64 seeds"))?;
    let frame = rendered.frame;
    let cfg = toy_config();
    let mut store = ParamStore::new();
    let mut model = Ts3d::new(&cfg, &mut store, &mut rng(700))?;
    perturb(&mut store, 701, 0.05);
    model.set_priors(estimate_priors([frame.labels.as_slice()], &model.shapes, cfg.num_classes))?;
    let loss_cfg = LossConfig::default();
    let detection = build_targets(&model.anchors, &frame.labels, cfg.num_classes, &model.priors, &frame.calib, &loss_cfg)?;
    if detection.num_positive() == 0 {
        return Err(Error::config("toy scene produced no positive anchors"));
    }
    let full = DisparityMap {
        width: params.width,
        height: params.height,
        disparity: rendered.disparity.clone(),
        valid: vec![true; params.width * params.height],
    };
    let targets = FrameTargets { detection, disparity: Some(full.downsample(4)) };
    let mut inputs = vec![frame.left.cast::<f64>(), frame.right.cast::<f64>()];
    check(&mut store, &mut inputs, Some(3), |g, v| {
        let fwd = model.forward(g, v[0], v[1], true)?;
        Ok(model.loss(g, &fwd, &targets, &loss_cfg)?.total)
    })
}

/// Formats one outcome as a `key=value` record.
pub fn describe(o: &CaseOutcome) -> String {
    let (at, analytic, numeric) = match &o.report.worst {
        Some((l, a, n)) => (l.as_str(), *a, *n),
        None => ("-", 0.0, 0.0),
    };
    format!(
        "scope={} case={} max_rel_error={:.3e} tolerance={:.0e} probes={} worst={} analytic={:.6e} numeric={:.6e} status={}",
        o.scope.name(),
        o.name,
        o.report.max_rel_error,
        o.tolerance,
        o.report.probes,
        at,
        analytic,
        numeric,
        if o.passed() { "pass" } else { "FAIL" }
    )
}
