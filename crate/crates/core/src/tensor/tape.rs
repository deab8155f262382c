use std::cell::RefCell;
use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fmt;
use std::hash::Hasher;

use super::ops::Operation;
use super::{Param, ParamId, Tensor};
use crate::error::{contract, Result};

pub type NodeId = usize;

struct Node {
    value: Tensor,
    inputs: Vec<NodeId>,
    op: Option<Box<dyn Operation>>,
    requires_grad: bool,
}

/// Everything a backward rule may look at.
pub struct BackwardCtx<'a> {
    pub inputs: &'a [&'a Tensor],
    pub output: &'a Tensor,
    /// Gradient of the loss with respect to `output`.
    pub grad: &'a Tensor,
    /// Which inputs actually need a gradient.
    pub needs: &'a [bool],
}

/// Define-by-run operation recorder.
///
/// Nodes are appended in execution order, so the vector index is already a
/// topological order and backward is a single reverse sweep. The tape is
/// `!Sync` through its `RefCell`s; use one tape per thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Tensor>>>,
    params: RefCell<HashMap<ParamId, NodeId>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, node: Node) -> NodeId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        self.grads.borrow_mut().push(None);
        nodes.len() - 1
    }

    /// Records a leaf.
    pub fn var(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let id = self.push(Node {
            value,
            inputs: vec![],
            op: None,
            requires_grad,
        });
        Var { tape: self, id }
    }

    /// Leaf that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.var(value, false)
    }

    /// Binds a parameter onto this tape. Binding the same parameter again
    /// returns the existing node, so its gradient is accumulated once.
    pub fn param(&self, param: &Param) -> Var<'_> {
        if let Some(&id) = self.params.borrow().get(&param.id()) {
            return Var { tape: self, id };
        }
        let v = self.var(param.value().clone(), true);
        self.params.borrow_mut().insert(param.id(), v.id);
        v
    }

    /// Runs `op` forward on `inputs` and records it.
    pub fn apply<O: Operation + 'static>(&self, mut op: O, inputs: &[Var<'_>]) -> Result<Var<'_>> {
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            let values: Vec<&Tensor> = inputs.iter().map(|v| &nodes[v.id].value).collect();
            let value = op.forward(&values)?;
            let requires_grad = inputs.iter().any(|v| nodes[v.id].requires_grad);
            (value, requires_grad)
        };
        let id = self.push(Node {
            value,
            inputs: inputs.iter().map(|v| v.id).collect(),
            op: Some(Box::new(op)),
            requires_grad,
        });
        Ok(Var { tape: self, id })
    }

    pub fn value(&self, v: Var<'_>) -> Tensor {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn with_value<R>(&self, v: Var<'_>, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[v.id].value)
    }

    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        self.grads.borrow()[v.id].clone()
    }

    /// Gradient accumulated for a bound parameter, if it was bound and reached.
    pub fn param_grad(&self, param: &Param) -> Option<Tensor> {
        let id = *self.params.borrow().get(&param.id())?;
        self.grads.borrow()[id].clone()
    }

    /// Adds this tape's gradients into each parameter's own accumulator.
    pub fn accumulate_into<'p>(&self, params: impl IntoIterator<Item = &'p mut Param>) -> Result<()> {
        for p in params {
            if let Some(g) = self.param_grad(p) {
                p.grad_mut().add_assign(&g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().iter_mut().for_each(|g| *g = None);
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Names of recorded operations in recording order (leaves excluded).
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes
            .borrow()
            .iter()
            .filter_map(|n| n.op.as_ref().map(|op| op.name()))
            .collect()
    }

    pub fn count_ops(&self, name: &str) -> usize {
        self.op_names().into_iter().filter(|n| *n == name).count()
    }

    /// Hash of the branch taken by every piecewise operation on the tape.
    ///
    /// Two forward passes with equal signatures lie on the same smooth piece,
    /// which is what a central finite difference needs.
    pub fn kink_signature(&self) -> u64 {
        let nodes = self.nodes.borrow();
        let mut pattern = Vec::new();
        for node in nodes.iter() {
            if let Some(op) = &node.op {
                let values: Vec<&Tensor> = node.inputs.iter().map(|&i| &nodes[i].value).collect();
                op.kink_pattern(&values, &mut pattern);
            }
        }
        let mut h = DefaultHasher::new();
        for bit in pattern {
            h.write_u8(bit as u8);
        }
        h.finish()
    }

    /// Reverse sweep from a scalar `loss`. Gradients add onto whatever earlier
    /// calls left behind until [`Tape::zero_grad`].
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(contract!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            ));
        }
        if !root.requires_grad {
            return Ok(());
        }
        let mut adjoint: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        adjoint[loss.id] = Some(Tensor::ones(root.value.shape().to_vec()));
        let mut grads = self.grads.borrow_mut();

        for id in (0..=loss.id).rev() {
            let Some(g) = adjoint[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if let Some(op) = &node.op {
                let needs: Vec<bool> = node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
                if needs.iter().any(|&n| n) {
                    let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| &nodes[i].value).collect();
                    let ctx = BackwardCtx {
                        inputs: &inputs,
                        output: &node.value,
                        grad: &g,
                        needs: &needs,
                    };
                    let input_grads = op.backward(&ctx);
                    debug_assert_eq!(input_grads.len(), node.inputs.len());
                    for ((&input, need), ig) in node.inputs.iter().zip(&needs).zip(input_grads) {
                        if let (true, Some(ig)) = (*need, ig) {
                            accumulate(&mut adjoint[input], ig);
                        }
                    }
                }
            }
            accumulate(&mut grads[id], g);
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing
            .add_assign(&g)
            .expect("gradient shape matches its node"),
        None => *slot = Some(g),
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(*self)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(*self, |t| t.shape().to_vec())
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn backward(&self) -> Result<()> {
        self.tape.backward(*self)
    }

    /// Copy of the current value as a new constant leaf.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value())
    }
}
