use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::tape::{Grads, Tape, Var};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

/// Tape handles for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter {name}")));
        }
        if !tensor.is_finite() {
            return Err(Error::numeric(format!("parameter {name} is not finite")));
        }
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push((name, tensor.with_grad()));
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Registers every parameter as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape) -> Result<Bound> {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| {
                let mut leaf = Tensor::new(t.shape(), t.data().to_vec())?;
                leaf.requires_grad = true;
                tape.leaf(leaf)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { vars })
    }

    /// Registers every parameter as a constant, for inference without
    /// backward bookkeeping.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Result<Bound> {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| tape.constant(Tensor::new(t.shape(), t.data().to_vec())?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { vars })
    }

    /// Adds the leaf gradients of a backward pass into each tensor's `grad`.
    pub fn accumulate(&mut self, grads: &Grads, bound: &Bound) {
        for ((_, t), &v) in self.entries.iter_mut().zip(&bound.vars) {
            let Some(g) = grads.get(v) else { continue };
            match &mut t.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g.to_vec()),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.entries.iter_mut().for_each(|(_, t)| t.zero_grad());
    }

    /// Replaces values by name; every stored parameter must be present with
    /// a matching shape.
    pub fn load_values(&mut self, records: Vec<(String, Tensor)>) -> Result<()> {
        let mut seen = vec![false; self.entries.len()];
        for (name, t) in records {
            let id = self
                .index
                .get(&name)
                .copied()
                .ok_or_else(|| Error::format(format!("unknown parameter {name}")))?;
            let slot = &mut self.entries[id].1;
            if slot.shape() != t.shape() {
                return Err(Error::format(format!(
                    "parameter {name}: stored shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            slot.data_mut().copy_from_slice(t.data());
            seen[id] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::format(format!(
                "checkpoint lacks parameter {}",
                self.entries[missing].0
            )));
        }
        Ok(())
    }
}
