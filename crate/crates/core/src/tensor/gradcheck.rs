use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{Graph, ParamStore, Tensor, Var};
use crate::Result;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Caps the number of elements probed per tensor; probes are spread
    /// evenly over the tensor. `None` probes every element.
    pub max_probes_per_tensor: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { eps: 1e-6, max_probes_per_tensor: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − fd| / max(1, |analytic|, |fd|)` over every probe.
    pub max_rel_error: f64,
    /// Location of the worst probe, with its analytic and numeric values.
    pub worst: Option<(String, f64, f64)>,
    pub probes: usize,
}

fn probe_indices(n: usize, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(cap) if cap < n => (0..cap).map(|i| i * n / cap).collect(),
        _ => (0..n).collect(),
    }
}

fn eval<F>(params: &ParamStore<f64>, inputs: &[Tensor<f64>], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::with_params(params);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.check_finite()?;
    Ok(g.value(loss).item())
}

/// Compares reverse-mode gradients of the scalar `f` against central finite
/// differences, over every input tensor and every parameter in `params`.
pub fn check_gradients<F>(
    params: &mut ParamStore<f64>,
    inputs: &mut [Tensor<f64>],
    opts: &GradCheckOptions,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let (input_grads, param_grads) = {
        let mut g = Graph::with_params(params);
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        let grads = g.backward(loss)?;
        let ig: Vec<Option<Vec<f64>>> = vars.iter().map(|&v| grads.wrt(v).map(<[f64]>::to_vec)).collect();
        let mut pg: Vec<Option<Vec<f64>>> = alloc::vec![None; params.len()];
        for (id, grad) in grads.params() {
            pg[id.index()] = grad.map(<[f64]>::to_vec);
        }
        (ig, pg)
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, probes: 0 };
    let eps = opts.eps;
    let mut record = |label: String, analytic: f64, numeric: f64| {
        let denom = 1f64.max(analytic.abs()).max(numeric.abs());
        let err = (analytic - numeric).abs() / denom;
        report.probes += 1;
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((label, analytic, numeric));
        }
    };

    for i in 0..inputs.len() {
        for j in probe_indices(inputs[i].numel(), opts.max_probes_per_tensor) {
            let orig = inputs[i].data()[j];
            inputs[i].data_mut()[j] = orig + eps;
            let plus = eval(params, inputs, &f)?;
            inputs[i].data_mut()[j] = orig - eps;
            let minus = eval(params, inputs, &f)?;
            inputs[i].data_mut()[j] = orig;
            let analytic = input_grads[i].as_ref().map_or(0.0, |g| g[j]);
            record(format!("input{i}[{j}]"), analytic, (plus - minus) / (2.0 * eps));
        }
    }

    let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
    for id in ids {
        for j in probe_indices(params.get(id).value.numel(), opts.max_probes_per_tensor) {
            let orig = params.get(id).value.data()[j];
            params.get_mut(id).value.data_mut()[j] = orig + eps;
            let plus = eval(params, inputs, &f)?;
            params.get_mut(id).value.data_mut()[j] = orig - eps;
            let minus = eval(params, inputs, &f)?;
            params.get_mut(id).value.data_mut()[j] = orig;
            let analytic = param_grads[id.index()].as_ref().map_or(0.0, |g| g[j]);
            let label = format!("{}[{j}]", params.get(id).name);
            record(label, analytic, (plus - minus) / (2.0 * eps));
        }
    }
    Ok(report)
}
