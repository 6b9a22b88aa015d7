use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use super::{Element, Gradients, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor. The dotted name is its checkpoint identity.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: BTreeMap<String, ParamId>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), by_name: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Param(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad: None });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds a backward pass's parameter gradients into the stored ones.
    /// Parameters the loss does not reach accumulate zeros.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (id, g) in grads.params() {
            let p = &mut self.params[id.0];
            let slot = p.grad.get_or_insert_with(|| vec![T::zero(); p.value.numel()]);
            if let Some(g) = g {
                for (s, &v) in slot.iter_mut().zip(g) {
                    *s += v;
                }
            }
        }
    }

    /// Multiplies every stored gradient by `factor`.
    pub fn scale_grads(&mut self, factor: T) {
        for p in &mut self.params {
            if let Some(g) = &mut p.grad {
                g.iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    /// Same parameters converted to another element type.
    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.as_ref().map(|g| g.iter().map(|v| U::of(v.as_f64())).collect()),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Overwrites a parameter's value by name, keeping its shape contract.
    pub fn set_value(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self.id_of(name).ok_or_else(|| Error::Param(format!("unknown parameter `{name}`")))?;
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::Param(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }
}

/// Registers parameters under a dotted name prefix, drawing initial values
/// from a shared random source.
pub struct ParamBuilder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut dyn RngCore,
    prefix: String,
}

impl<'a, T: Element> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut dyn RngCore) -> Self {
        ParamBuilder { store, rng, prefix: String::new() }
    }

    pub fn sub(&mut self, name: &str) -> ParamBuilder<'_, T> {
        let prefix = self.path(name);
        ParamBuilder { store: &mut *self.store, rng: &mut *self.rng, prefix }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            String::from(name)
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn tensor(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        let path = self.path(name);
        self.store.insert(path, value)
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..=bound)));
        self.tensor(name, t)
    }

    /// He-uniform initialisation for a layer with `fan_in` inputs.
    pub fn kaiming(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let bound = libm::sqrt(6.0 / fan_in as f64);
        self.uniform(name, shape, bound)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        self.tensor(name, Tensor::full(shape, T::of(value)))
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.constant(name, shape, 0.0)
    }
}
