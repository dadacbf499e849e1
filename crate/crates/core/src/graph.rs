//! Reverse-mode differentiation over a linear tape.
//!
//! A [`Graph`] records every forward op as a node holding its value and the
//! inputs needed for the backward rule. Nodes are appended in execution
//! order, so walking the tape backwards visits each op exactly once after all
//! of its consumers.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};
use crate::ops::Op;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

pub struct Graph<T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
    params: HashMap<(u64, ParamId), Var>,
    check_finite: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: HashMap::new(), check_finite: cfg!(debug_assertions) }
    }

    /// Turns the per-op finiteness guard on or off (on by default in debug builds).
    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, true)
    }

    fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Loads a parameter; repeated loads of the same parameter share one node.
    pub fn param(&mut self, ps: &ParamStore<T>, id: ParamId) -> Var {
        let key = (ps.uid(), id);
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.leaf(ps.value(id).clone(), ps.is_trainable(id));
        self.params.insert(key, v);
        v
    }

    /// Parameters of `ps` loaded on this graph, with their nodes.
    pub fn params_of<'a>(
        &'a self,
        ps: &'a ParamStore<T>,
    ) -> impl Iterator<Item = (ParamId, Var)> + 'a {
        let uid = ps.uid();
        self.params.iter().filter(move |((u, _), _)| *u == uid).map(|((_, id), v)| (*id, *v))
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if self.check_finite {
            value.check_finite(op.name())?;
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        // inputs are no longer needed in the op once nothing upstream wants a gradient
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        self.backward_with(loss, Tensor::full(lt.shape(), T::one()))
    }

    /// Back-propagates an explicit upstream gradient `seed` for `out`.
    pub fn backward_with(&self, out: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        self.value(out).same_shape(&seed)?;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(gout);
                continue;
            }
            let contributions = crate::ops::backward(self, Var(i), &gout)?;
            for (input, g) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf; `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, zeros when the loss does not depend on it.
    pub fn wrt_or_zeros(&self, g: &Graph<T>, v: Var) -> Tensor<T> {
        self.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(v)))
    }
}
