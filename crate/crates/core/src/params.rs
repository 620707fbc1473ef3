//! Named trainable parameters and non-trainable buffers.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Buffers such as batch-norm running statistics are stored alongside
    /// parameters but never updated by the optimizer.
    pub trainable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Invalid(format!("duplicate parameter name {name}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
            trainable,
        });
        self.by_name.insert(name.to_string(), self.params.len() - 1);
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.shape().len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Mutable values of two distinct entries (batch-norm running statistics).
    pub fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut Tensor, &mut Tensor) {
        assert_ne!(a.0, b.0);
        if a.0 < b.0 {
            let (lo, hi) = self.params.split_at_mut(b.0);
            (&mut lo[a.0].value, &mut hi[0].value)
        } else {
            let (lo, hi) = self.params.split_at_mut(a.0);
            (&mut hi[0].value, &mut lo[b.0].value)
        }
    }
}

/// Records which graph leaves stand for which parameters during one forward
/// pass, so gradients can be copied back into the store.
#[derive(Default)]
pub struct Binder {
    bound: Vec<(ParamId, Var)>,
    frozen: bool,
}

impl Binder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Binds every parameter as a constant (inference).
    pub fn frozen() -> Self {
        Binder {
            bound: Vec::new(),
            frozen: true,
        }
    }

    pub fn bind(&mut self, graph: &mut Graph, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.bound.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let p = store.get(id);
        let v = if p.trainable && !self.frozen {
            graph.variable(p.value.clone())
        } else {
            graph.constant(p.value.clone())
        };
        self.bound.push((id, v));
        v
    }

    /// Accumulates leaf gradients into `store` (grads are added, not set).
    pub fn collect(&self, grads: &mut Gradients, store: &mut ParamStore) {
        for &(id, v) in &self.bound {
            if let Some(g) = grads.take(v) {
                store.get_mut(id).grad.add_assign(&g);
            }
        }
    }

    pub fn var(&self, id: ParamId) -> Option<Var> {
        self.bound.iter().find(|(p, _)| *p == id).map(|&(_, v)| v)
    }
}

/// Fan-in scaled uniform initialisation: `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
pub fn he_uniform<R: Rng>(shape: Shape, fan_in: usize, rng: &mut R) -> Tensor {
    let limit = libm::sqrt(6.0 / fan_in.max(1) as f64);
    let data = (0..shape.len())
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Tensor::from_vec(shape, data).expect("length matches")
}
