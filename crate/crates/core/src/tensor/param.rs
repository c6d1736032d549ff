use std::collections::HashMap;

use super::{Tape, Tensor};
use crate::error::{Error, Result};

/// Index of a parameter inside its [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learnable tensor together with its gradient and Adam moment buffers.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub grad: Vec<f64>,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        let len = tensor.len();
        Parameter {
            name: name.into(),
            tensor,
            grad: vec![0.0; len],
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Ordered, uniquely named collection of parameters. Insertion order is the
/// canonical order for checkpoints and gradient reduction.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Usage(format!("duplicate parameter name `{name}`")));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Parameter::new(name, tensor));
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.id(name).map(move |id| self.get_mut(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    /// Places parameter `id` on the tape as a leaf tied to this set.
    pub fn bind(&self, tape: &mut Tape, id: ParamId) -> super::Var {
        tape.param(id, self.get(id).tensor.clone())
    }

    /// Adds every parameter gradient recorded on `tape` into the parameter
    /// grad buffers.
    pub fn accumulate(&mut self, tape: &Tape) {
        for (id, grad) in tape.param_grads() {
            let p = &mut self.params[id.0];
            for (acc, g) in p.grad.iter_mut().zip(grad) {
                *acc += g;
            }
        }
    }

    /// Snapshot of all parameter values in canonical order.
    pub fn values(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.tensor.clone()).collect()
    }

    pub fn load_values(&mut self, values: &[Tensor]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::dim("load_values", "parameter count", self.params.len(), values.len()));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.tensor.shape() != v.shape() {
                return Err(Error::Usage(format!(
                    "parameter `{}` expects shape {:?}, got {:?}",
                    p.name,
                    p.tensor.shape(),
                    v.shape()
                )));
            }
            p.tensor = v.clone();
        }
        Ok(())
    }
}
