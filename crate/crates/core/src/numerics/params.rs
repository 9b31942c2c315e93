use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::graph::{Gradients, Graph};
use crate::numerics::tensor::Tensor;

/// A named learnable (or frozen) tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub requires_grad: bool,
    pub grad: Option<Tensor>,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        Self { value, requires_grad: true, grad: None }
    }

    pub fn frozen(value: Tensor) -> Self {
        Self { value, requires_grad: false, grad: None }
    }
}

/// Parameters keyed by dotted name, iterated in sorted order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, p: Parameter) {
        self.params.insert(name.into(), p);
    }

    pub fn get(&self, name: &str) -> Result<&Parameter> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Validation(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Validation(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Parameter)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Parameter)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Sets `requires_grad` on every parameter whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.requires_grad = trainable;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// Copies the gradients of every parameter bound on `graph` into the
    /// store. Parameters that do not require gradients end up with `None`.
    pub fn collect_grads(&mut self, graph: &Graph, grads: &Gradients) {
        self.collect_grads_scoped(graph, grads, "");
    }

    /// Like [`ParamStore::collect_grads`] for parameters bound under `scope`.
    pub fn collect_grads_scoped(&mut self, graph: &Graph, grads: &Gradients, scope: &str) {
        for (full, var) in graph.bound_params() {
            let Some(name) = full.strip_prefix(scope) else { continue };
            if let Some(p) = self.params.get_mut(name) {
                p.grad = if p.requires_grad { grads.get(var) } else { None };
            }
        }
    }

    /// Overwrites values and trainability from `other`, which must hold
    /// exactly the same names and shapes.
    pub fn replace_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Validation(format!(
                "{} parameters supplied, {} expected",
                other.params.len(),
                self.params.len()
            )));
        }
        for (name, p) in self.params.iter_mut() {
            let src = other.get(name)?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::Shape(format!("parameter {name} has shape {:?}", src.value.shape())));
            }
            p.value = src.value.clone();
            p.requires_grad = src.requires_grad;
            p.grad = None;
        }
        Ok(())
    }

    /// Merges all parameters of `other` under `prefix`.
    pub fn absorb(&mut self, prefix: &str, other: ParamStore) {
        for (name, p) in other.params {
            self.params.insert(format!("{prefix}{name}"), p);
        }
    }
}
