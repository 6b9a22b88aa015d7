use alloc::vec;
use alloc::vec::Vec;

use super::{Element, ParamStore};
use crate::{Error, Result};

/// `base_lr · ½ · (1 + cos(π · step / total))`, held at zero past `total`.
pub fn cosine_lr(step: u64, total: u64, base_lr: f64) -> f64 {
    if total == 0 {
        return base_lr;
    }
    let t = (step.min(total)) as f64 / total as f64;
    base_lr * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub total_steps: u64,
    /// Global gradient-norm ceiling applied before the update.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            base_lr: 2e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            total_steps: 1,
            max_grad_norm: None,
        }
    }
}

/// First/second moment buffers, one per parameter, and the step counter.
#[derive(Debug, Clone)]
pub struct OptimState<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Element> OptimState<T> {
    pub fn new(config: AdamWConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, p)| vec![T::zero(); p.value.numel()]).collect::<Vec<_>>();
        OptimState { config, step: 0, first: zeros(), second: zeros() }
    }

    pub fn current_lr(&self) -> f64 {
        cosine_lr(self.step, self.config.total_steps, self.config.base_lr)
    }
}

/// One AdamW update with decoupled weight decay at the cosine-scheduled
/// learning rate of the current step. Weight decay skips rank-1 tensors
/// (biases and normalisation affines). Returns the learning rate used.
pub fn adamw_step<T: Element>(params: &mut ParamStore<T>, state: &mut OptimState<T>) -> Result<f64> {
    if state.first.len() != params.len() {
        return Err(Error::Param(alloc::format!(
            "optimizer tracks {} parameters, store has {}",
            state.first.len(),
            params.len()
        )));
    }
    for (i, (_, p)) in params.iter().enumerate() {
        if p.grad.is_none() {
            return Err(Error::MissingGrad(p.name.clone()));
        }
        if state.first[i].len() != p.value.numel() {
            return Err(Error::Param(alloc::format!("moment buffer of `{}` does not match its shape", p.name)));
        }
    }
    let cfg = state.config.clone();
    let lr = state.current_lr();
    let clip = match cfg.max_grad_norm {
        Some(max) => {
            let norm: f64 = params
                .iter()
                .flat_map(|(_, p)| p.grad.as_deref().unwrap_or(&[]).iter())
                .map(|g| g.as_f64() * g.as_f64())
                .sum::<f64>();
            let norm = libm::sqrt(norm);
            if norm > max { max / norm } else { 1.0 }
        }
        None => 1.0,
    };
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (lr_t, eps) = (T::of(lr), T::of(cfg.eps));
    let decay = T::of(1.0 - lr * cfg.weight_decay);
    let (inv_bc1, inv_bc2) = (T::of(1.0 / bc1), T::of(1.0 / bc2));
    let clip = T::of(clip);
    for (i, p) in params.iter_mut().enumerate() {
        let decayed = p.value.rank() >= 2;
        let grad = p.grad.as_deref().expect("checked above");
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        for (((w, &g), mi), vi) in p.value.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            let g = g * clip;
            *mi = b1 * *mi + (T::one() - b1) * g;
            *vi = b2 * *vi + (T::one() - b2) * g * g;
            if decayed {
                *w *= decay;
            }
            let mhat = *mi * inv_bc1;
            let vhat = *vi * inv_bc2;
            *w -= lr_t * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(lr)
}
