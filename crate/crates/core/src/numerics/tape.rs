//! Dynamic reverse-mode tape.
//!
//! Every op computes its forward value eagerly, checks it is finite, and
//! pushes a node holding the value, its parents and a [`Backward`] rule.
//! Domain modules add fused ops by implementing [`Backward`] and calling
//! [`Tape::push`].

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Inputs handed to a backward rule.
pub struct BackwardCtx<'a> {
    pub inputs: Vec<&'a Tensor>,
    pub output: &'a Tensor,
    /// Gradient of the loss w.r.t. `output`.
    pub grad: &'a [f32],
    /// Whether input `i` needs a gradient at all.
    pub needs: Vec<bool>,
}

pub trait Backward {
    /// Returns one gradient buffer per input, `None` when `needs[i]` is false.
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f32>>>;
}

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    op: Option<Box<dyn Backward>>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by node.
pub struct Grads {
    grads: Vec<Option<Vec<f32>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f32>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a leaf. Gradients are tracked when `t.requires_grad` is set.
    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        if !t.is_finite() {
            return Err(Error::numeric("non-finite leaf value"));
        }
        let requires_grad = t.requires_grad;
        Ok(self.push_node(t, Vec::new(), None, requires_grad))
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        let mut t = t;
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f32] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Pushes a computed value with its backward rule.
    pub fn push(
        &mut self,
        value: Tensor,
        parents: &[Var],
        op: impl Backward + 'static,
    ) -> Result<Var> {
        if let Some(bad) = value.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite value at flat index {bad} (shape {:?})",
                value.shape()
            )));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op: Option<Box<dyn Backward>> = if requires_grad {
            Some(Box::new(op))
        } else {
            None
        };
        Ok(self.push_node(value, parents.to_vec(), op, requires_grad))
    }

    fn push_node(
        &mut self,
        value: Tensor,
        parents: Vec<Var>,
        op: Option<Box<dyn Backward>>,
        requires_grad: bool,
    ) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            parents,
            op,
            requires_grad,
        });
        Var(id)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let Some(op) = node.op.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let ctx = BackwardCtx {
                inputs: node
                    .parents
                    .iter()
                    .map(|p| &self.nodes[p.0].value)
                    .collect(),
                output: &node.value,
                grad: &grad,
                needs: node
                    .parents
                    .iter()
                    .map(|p| self.nodes[p.0].requires_grad)
                    .collect(),
            };
            let parent_grads = op.backward(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.len(), self.nodes[p.0].value.len());
                match &mut grads[p.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Grads { grads })
    }
}
