use std::sync::atomic::{AtomicU64, Ordering};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a value recorded on a [`Tape`].
///
/// Handles are tied to the tape (and generation) that produced them; using
/// one after [`Tape::clear`] or on another tape is an error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Vector-Jacobian product of one recorded op.
///
/// `inputs` are the op's input values in recording order, `output` is the
/// value it produced and `grad` is the upstream gradient (same shape as
/// `output`). Implementations return one entry per input: `Some` with a
/// buffer of the input's length where `needs[i]` is set, `None` otherwise.
pub trait Backward<T: Scalar>: Send + Sync {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>>;
}

struct Node<T: Scalar> {
    op: &'static str,
    value: Tensor<T>,
    inputs: Vec<usize>,
    requires_grad: bool,
    backward: Option<Box<dyn Backward<T>>>,
    grad: Option<Tensor<T>>,
}

/// Ordered record of a forward computation.
///
/// Nodes are appended in execution order, so every node's inputs precede
/// it. [`Tape::backward`] walks the nodes once in reverse, summing gradient
/// contributions on fan-out, and leaves gradients on the leaves that were
/// created with [`Tape::param`].
pub struct Tape<T: Scalar = f32> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: fresh_id(),
            nodes: Vec::new(),
        }
    }

    /// Drops every recorded node. Outstanding [`Var`]s become detached.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.id = fresh_id();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            op: "leaf",
            value,
            inputs: Vec::new(),
            requires_grad,
            backward: None,
            grad: None,
        });
        Var {
            tape: self.id,
            index,
        }
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    /// A leaf whose gradient is populated by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    pub(crate) fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::DetachedVar { index: v.index });
        }
        Ok(())
    }

    /// Value of a recorded variable.
    ///
    /// Panics if `v` was not produced by this tape; use [`Tape::try_value`]
    /// for a fallible lookup.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.try_value(v).expect("variable belongs to this tape")
    }

    pub fn try_value(&self, v: Var) -> Result<&Tensor<T>> {
        self.check(v)?;
        Ok(&self.nodes[v.index].value)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.check(v).is_ok() && self.nodes[v.index].requires_grad
    }

    pub fn op_name(&self, v: Var) -> Option<&'static str> {
        self.check(v).ok().map(|_| self.nodes[v.index].op)
    }

    /// Gradient of the last backward pass with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.check(v).ok()?;
        self.nodes[v.index].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.check(v).ok()?;
        self.nodes[v.index].grad.take()
    }

    /// Appends the result of an op along with the context needed to
    /// differentiate it.
    pub fn record(
        &mut self,
        op: &'static str,
        inputs: &[Var],
        value: Tensor<T>,
        backward: impl Backward<T> + 'static,
    ) -> Result<Var> {
        for &v in inputs {
            self.check(v)?;
        }
        if cfg!(debug_assertions)
            && !value.is_finite()
            && inputs.iter().all(|&v| self.nodes[v.index].value.is_finite())
        {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = inputs.iter().any(|&v| self.nodes[v.index].requires_grad);
        let index = self.nodes.len();
        self.nodes.push(Node {
            op,
            value,
            inputs: inputs.iter().map(|v| v.index).collect(),
            requires_grad,
            backward: requires_grad.then(|| Box::new(backward) as Box<dyn Backward<T>>),
            grad: None,
        });
        Ok(Var {
            tape: self.id,
            index,
        })
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Gradients from earlier passes are discarded first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss)?;
        let root = &self.nodes[loss.index];
        if root.value.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: root.value.shape().to_vec(),
            });
        }
        for node in &mut self.nodes {
            node.grad = None;
        }

        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.index + 1];
        grads[loss.index] = Some(vec![T::one()]);
        let mut leaf_grads = Vec::new();

        for i in (0..=loss.index).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(op) = &node.backward else {
                leaf_grads.push((i, g));
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node
                .inputs
                .iter()
                .map(|&j| &self.nodes[j].value)
                .collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|&j| self.nodes[j].requires_grad)
                .collect();
            let upstream = Tensor::from_parts(node.value.shape().to_vec(), g);
            let input_grads = op.backward(&inputs, &node.value, &upstream, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "op {}", node.op);
            for ((&j, gi), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                let Some(gi) = gi else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(gi.len(), self.nodes[j].value.numel(), "op {}", node.op);
                match &mut grads[j] {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, &b)| *a = *a + b),
                    slot @ None => *slot = Some(gi),
                }
            }
        }

        for (i, g) in leaf_grads {
            let shape = self.nodes[i].value.shape().to_vec();
            self.nodes[i].grad = Some(Tensor::from_parts(shape, g));
        }
        Ok(())
    }
}
