use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::{Element, ParamId, ParamStore, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

/// Reverse-mode rule of one recorded operator.
pub(crate) trait Backward<T: Element> {
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>);
}

/// View handed to a [`Backward`] rule: the node's inputs, its output, the
/// incoming gradient and writable gradient slots for the inputs.
pub(crate) struct BackwardCtx<'a, T: Element> {
    nodes: &'a [Node<T>],
    inputs: &'a [Var],
    pub out: &'a Tensor<T>,
    pub out_grad: &'a [T],
    grads: &'a mut [Option<Vec<T>>],
}

impl<'a, T: Element> BackwardCtx<'a, T> {
    pub fn input(&self, i: usize) -> &'a Tensor<T> {
        &self.nodes[self.inputs[i].0].value
    }

    pub fn wants(&self, i: usize) -> bool {
        self.nodes[self.inputs[i].0].needs_grad
    }

    /// Gradient slot of input `i`, zero-initialised on first use. Gradients
    /// add across every use of a value.
    pub fn grad_mut(&mut self, i: usize) -> &mut [T] {
        let id = self.inputs[i].0;
        let n = self.nodes[id].value.numel();
        self.grads[id].get_or_insert_with(|| vec![T::zero(); n])
    }

    pub fn accumulate(&mut self, i: usize, g: &[T]) {
        if !self.wants(i) {
            return;
        }
        let slot = self.grad_mut(i);
        for (s, &v) in slot.iter_mut().zip(g) {
            *s += v;
        }
    }
}

pub(crate) struct Node<T: Element> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    op: Option<Box<dyn Backward<T>>>,
    name: &'static str,
    needs_grad: bool,
}

/// A tape of operator applications. Values are computed eagerly when an
/// operator is recorded; [`Graph::backward`] walks the tape in reverse.
pub struct Graph<'p, T: Element> {
    nodes: Vec<Node<T>>,
    params: Option<&'p ParamStore<T>>,
    param_vars: BTreeMap<ParamId, Var>,
    nonfinite: Option<&'static str>,
}

impl<T: Element> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Element> Graph<'p, T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), params: None, param_vars: BTreeMap::new(), nonfinite: None }
    }

    pub fn with_params(params: &'p ParamStore<T>) -> Self {
        Graph { params: Some(params), ..Self::new() }
    }

    pub fn params(&self) -> Option<&'p ParamStore<T>> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false, "constant")
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true, "leaf")
    }

    /// Records (once per graph) the current value of a parameter.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.params.expect("graph was built without a parameter store");
        let value = store.get(id).value.clone();
        let v = self.push_leaf(value, true, "param");
        self.param_vars.insert(id, v);
        v
    }

    fn push_leaf(&mut self, value: Tensor<T>, needs_grad: bool, name: &'static str) -> Var {
        if self.nonfinite.is_none() && !value.all_finite() {
            self.nonfinite = Some(name);
        }
        self.nodes.push(Node { value, inputs: Vec::new(), op: None, name, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push<B: Backward<T> + 'static>(
        &mut self,
        value: Tensor<T>,
        inputs: &[Var],
        op: B,
        name: &'static str,
    ) -> Var {
        if self.nonfinite.is_none() && !value.all_finite() {
            self.nonfinite = Some(name);
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let op: Option<Box<dyn Backward<T>>> = if needs_grad { Some(Box::new(op)) } else { None };
        self.nodes.push(Node { value, inputs: inputs.to_vec(), op, name, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Fails with the first operator whose output contained NaN or Inf.
    pub fn check_finite(&self) -> Result<()> {
        match self.nonfinite {
            Some(op) => Err(Error::NonFinite { op }),
            None => Ok(()),
        }
    }

    /// Back-propagates from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check_finite()?;
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::shape("backward", alloc::format!("loss must be a scalar, got {:?}", root.value.shape())));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(op) = node.op.as_ref() else { continue };
            let (lower, upper) = grads.split_at_mut(idx);
            let Some(out_grad) = upper[0].as_deref() else { continue };
            let mut ctx = BackwardCtx {
                nodes: &self.nodes,
                inputs: &node.inputs,
                out: &node.value,
                out_grad,
                grads: lower,
            };
            op.backward(&mut ctx);
            for v in &node.inputs {
                if let Some(g) = &lower[v.0] {
                    if g.iter().any(|x| !x.is_finite()) {
                        return Err(Error::NonFinite { op: node.name });
                    }
                }
            }
        }
        Ok(Gradients { grads, params: self.param_vars.clone() })
    }
}

/// Result of a backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: BTreeMap<ParamId, Var>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss with respect to `v`, or `None` when no path from
    /// `v` reaches the loss.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Parameters recorded on the graph with their gradients; parameters
    /// the loss does not depend on report `None`.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, Option<&[T]>)> + '_ {
        self.params.iter().map(move |(&id, &v)| (id, self.wrt(v)))
    }
}
