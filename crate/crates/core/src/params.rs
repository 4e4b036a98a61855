//! Named parameter storage and graph binding.

use std::ops::Index;

use indexmap::IndexMap;
use rand::Rng;

use crate::error::{config_err, dim_err, Error, Result};
use crate::tensor::{Gradients, Graph, Scalar, Tensor, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, uniquely named trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(config_err!("duplicate parameter name `{name}`"));
        }
        let (idx, _) = self
            .entries
            .insert_full(name, tensor.with_requires_grad(true));
        Ok(ParamId(idx))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).expect("valid id").0
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Replaces the value of an existing parameter, keeping its shape.
    pub fn set(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let slot = self
            .entries
            .get_mut(name)
            .ok_or_else(|| config_err!("unknown parameter `{name}`"))?;
        if slot.shape() != tensor.shape() {
            return Err(dim_err!(
                "parameter `{name}` has shape {:?}, got {:?}",
                slot.shape(),
                tensor.shape()
            ));
        }
        *slot = tensor.with_requires_grad(true);
        Ok(())
    }

    /// Registers every parameter as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound(self.entries.values().map(|t| g.param(t.clone())).collect())
    }

    /// Registers every parameter as a constant (no gradient bookkeeping).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bound {
        Bound(
            self.entries
                .values()
                .map(|t| g.constant(t.clone()))
                .collect(),
        )
    }

    /// Moves leaf gradients from `grads` into each parameter's grad slot,
    /// adding to whatever is already there. Parameters the loss does not
    /// reach get an all-zero gradient.
    pub fn accumulate_grads(&mut self, bound: &Bound, grads: &mut Gradients<T>) -> Result<()> {
        for (i, (name, t)) in self.entries.iter_mut().enumerate() {
            let g = grads.take(bound.0[i]);
            let merged = match (t.take_grad(), g) {
                (Some(mut acc), Some(g)) => {
                    for (a, b) in acc.iter_mut().zip(g) {
                        *a = *a + b;
                    }
                    acc
                }
                (Some(acc), None) => acc,
                (None, Some(g)) => g,
                (None, None) => vec![T::zero(); t.len()],
            };
            if merged.len() != t.len() {
                return Err(Error::Dimension(format!(
                    "gradient size mismatch for `{name}`"
                )));
            }
            t.set_grad(merged)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for t in self.entries.values_mut() {
            t.clear_grad();
        }
    }
}

/// Graph handles for every parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Handles in store order, e.g. leaves created by a gradient check.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Helper that creates parameters under a dotted name prefix.
pub struct ParamBuilder<'a, T, R> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
    prefix: String,
}

impl<'a, T: Scalar, R: Rng> ParamBuilder<'a, T, R> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut R) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scoped<F, O>(&mut self, name: &str, f: F) -> O
    where
        F: FnOnce(&mut Self) -> O,
    {
        let saved = self.prefix.clone();
        self.prefix = if saved.is_empty() {
            name.to_string()
        } else {
            format!("{saved}.{name}")
        };
        let out = f(self);
        self.prefix = saved;
        out
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn add(&mut self, name: &str, tensor: Tensor<T>) -> Result<ParamId> {
        let full = self.full_name(name);
        self.store.add(full, tensor)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let t = Tensor::randn(shape.to_vec(), std, self.rng)?;
        self.add(name, t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape.to_vec())?)
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::ones(shape.to_vec())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f64>::new();
        s.add("w", Tensor::zeros(vec![2]).unwrap()).unwrap();
        assert!(s.add("w", Tensor::zeros(vec![2]).unwrap()).is_err());
    }

    #[test]
    fn unreached_params_get_zero_grad() {
        let mut s = ParamStore::<f64>::new();
        let a = s
            .add("a", Tensor::from_f64(vec![2], &[1.0, 2.0]).unwrap())
            .unwrap();
        s.add("b", Tensor::from_f64(vec![1], &[3.0]).unwrap())
            .unwrap();
        let mut g = Graph::new();
        let bound = s.bind(&mut g);
        let loss = g.sum(bound[a]).unwrap();
        let mut grads = g.backward(loss).unwrap();
        s.accumulate_grads(&bound, &mut grads).unwrap();
        assert_eq!(s.get(a).grad().unwrap(), &[1.0, 1.0]);
        assert_eq!(s.get(s.id("b").unwrap()).grad().unwrap(), &[0.0]);
    }
}
