use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded operation.
///
/// Implementors receive the forward inputs, the forward output and the
/// upstream gradient, and return one gradient per input (`None` for inputs
/// that are not differentiable, such as integer labels encoded as reals).
pub trait Function: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    func: Option<Box<dyn Function>>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, which is a valid topological order,
/// so the backward pass is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<&'static str>,
}

impl core::fmt::Debug for Tape {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
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

    /// Trainable leaf: gradients are reported for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Vec::new(), None, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Vec::new(), None, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Debug hook: corrupts the backward rule of every op named `op` so
    /// verification harnesses can prove they notice a wrong gradient.
    pub fn inject_fault(&mut self, op: &'static str) {
        self.fault = Some(op);
    }

    /// Records an op whose forward value has already been computed.
    pub fn record<F: Function + 'static>(&mut self, func: F, inputs: &[Var], value: Tensor) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let func: Option<Box<dyn Function>> = if requires_grad {
            Some(Box::new(func))
        } else {
            None
        };
        self.push(value, inputs.to_vec(), func, requires_grad)
    }

    fn push(
        &mut self,
        value: Tensor,
        inputs: Vec<Var>,
        func: Option<Box<dyn Function>>,
        requires_grad: bool,
    ) -> Var {
        self.nodes.push(Node {
            value,
            inputs,
            func,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar root, seeded with 1.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let value = self.value(root);
        if value.len() != 1 {
            return Err(Error::invalid("backward", value.shape(), "root must be scalar"));
        }
        self.backward_from(vec![(root, Tensor::full(value.shape(), 1.0))])
    }

    /// Reverse sweep seeded with explicit upstream gradients on any number
    /// of nodes. Seeds on the same node are summed.
    pub fn backward_from(&self, seeds: Vec<(Var, Tensor)>) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut start = 0;
        for (v, g) in seeds {
            if g.shape() != self.value(v).shape() {
                return Err(Error::shape("backward seed", g.shape(), self.value(v).shape()));
            }
            start = start.max(v.0 + 1);
            accumulate(&mut grads[v.0], g);
        }
        for i in (0..start).rev() {
            let node = &self.nodes[i];
            let Some(func) = node.func.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let mut input_grads = func.backward(&inputs, &node.value, &g);
            if self.fault == Some(func.name()) {
                for t in input_grads.iter_mut().flatten() {
                    t.data_mut().iter_mut().for_each(|x| *x *= 1.5);
                }
            }
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", func.name());
            for (v, ig) in node.inputs.iter().zip(input_grads) {
                if let Some(ig) = ig {
                    if self.nodes[v.0].requires_grad {
                        debug_assert_eq!(ig.shape(), self.nodes[v.0].value.shape(), "{}", func.name());
                        accumulate(&mut grads[v.0], ig);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Gradients of leaves after a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Gradient of `v`, or zeros of `shape` if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}
