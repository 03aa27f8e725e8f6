//! Reverse-mode differentiation tape.
//!
//! Nodes are appended in execution order, which is already a topological
//! order; `backward` walks them once from the loss towards the leaves.

use std::collections::BTreeMap;

use crate::error::{NeuralError, Result};
use crate::layers::ParamId;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Maps the output gradient to one gradient per input; `None` means the
/// input receives nothing from this node.
pub type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
    param: Option<ParamId>,
}

pub struct Tape {
    nodes: Vec<Node>,
    record: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            record: true,
        }
    }

    /// A tape that keeps values only; used for inference.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            record: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// Constant input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: false,
            param: None,
        })
    }

    /// Input whose gradient is wanted.
    pub fn variable(&mut self, value: Tensor) -> Var {
        let record = self.record;
        self.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: record,
            param: None,
        })
    }

    pub fn param(&mut self, id: ParamId, value: Tensor) -> Var {
        let record = self.record;
        self.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: record,
            param: Some(id),
        })
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

    /// Appends an operation. The closure is dropped when no input needs a
    /// gradient or the tape is not recording.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor,
        backward: impl Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Option<Tensor>> + 'static,
    ) -> Var {
        let requires_grad = self.record && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Node {
            value,
            parents: inputs.iter().map(|v| v.0).collect(),
            backward: requires_grad.then(|| Box::new(backward) as BackwardFn),
            requires_grad,
            param: None,
        })
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// requires one.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lnode = &self.nodes[loss.0];
        if lnode.value.numel() != 1 {
            return Err(NeuralError::NotScalar(lnode.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lnode.value.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = &node.backward else { continue };
            let Some(g) = grads[i].take() else { continue };
            let inputs: Vec<&Tensor> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let parent_grads = backward(&g, &inputs, &node.value);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), self.nodes[p].value.shape(), "gradient shape of node {p}");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
            grads[i] = Some(g);
        }
        let mut params: BTreeMap<ParamId, Tensor> = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(id), Some(g)) = (node.param, &grads[i]) {
                match params.get_mut(&id) {
                    Some(acc) => acc.add_assign(g),
                    None => {
                        params.insert(id, g.clone());
                    }
                }
            }
        }
        Ok(Gradients { grads, params })
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Per-parameter gradients, summed over every use on the tape.
    pub fn param_grads(&self) -> &BTreeMap<ParamId, Tensor> {
        &self.params
    }

    pub fn into_param_grads(self) -> BTreeMap<ParamId, Tensor> {
        self.params
    }
}
