//! The differentiation tape: an ordered record of primitive operations.

use std::cell::RefCell;
use std::rc::Rc;

use super::ops::Op;
use super::Tensor;
use crate::error::{Error, Result};

/// Reverse-mode tape. Cloning shares the underlying record.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

pub(crate) struct TapeInner {
    pub(crate) nodes: Vec<Node>,
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) grad: Option<Vec<f64>>,
}

/// Handle from a tensor into its tape.
#[derive(Clone)]
pub(crate) struct NodeRef {
    pub(crate) tape: Tape,
    pub(crate) id: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner { nodes: Vec::new() })),
        }
    }

    /// Track a detached copy of `t` as a leaf of this tape.
    pub fn watch(&self, t: &Tensor) -> Tensor {
        let id = self.push(Op::Leaf);
        Tensor::with_node(
            t.shape().to_vec(),
            t.data_rc(),
            Some(NodeRef {
                tape: self.clone(),
                id,
            }),
        )
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&self, op: Op) -> usize {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node { op, grad: None });
        id
    }

    pub(crate) fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub(crate) fn grad_of(&self, id: usize) -> Option<Vec<f64>> {
        self.inner.borrow().nodes[id].grad.clone()
    }

    /// Reverse sweep seeded at node `root` (a scalar). Existing gradients are
    /// cleared first; each node is visited exactly once, in reverse order.
    pub(crate) fn run_backward(&self, root: usize) {
        let mut inner = self.inner.borrow_mut();
        for node in inner.nodes.iter_mut() {
            node.grad = None;
        }
        inner.nodes[root].grad = Some(vec![1.0]);
        for i in (0..=root).rev() {
            let grad_out = match inner.nodes[i].grad.take() {
                Some(g) => g,
                None => continue,
            };
            // Move the op out to appease the borrow checker, then restore it.
            let op = std::mem::replace(&mut inner.nodes[i].op, Op::Leaf);
            op.accumulate(&grad_out, &mut |parent: usize, partial: &[f64]| {
                let node = &mut inner.nodes[parent];
                match &mut node.grad {
                    Some(g) => {
                        for (gi, pi) in g.iter_mut().zip(partial) {
                            *gi += pi;
                        }
                    }
                    None => node.grad = Some(partial.to_vec()),
                }
            });
            inner.nodes[i].op = op;
            inner.nodes[i].grad = Some(grad_out);
        }
    }
}

/// Pick the common tape of a primitive's operands, if any operand is tracked.
/// Operands on two distinct tapes are an error.
pub(crate) fn join_tapes<'a, I>(operands: I) -> Result<Option<Tape>>
where
    I: IntoIterator<Item = &'a Tensor>,
{
    let mut found: Option<Tape> = None;
    for t in operands {
        if let Some(node) = t.node_ref() {
            match &found {
                None => found = Some(node.tape.clone()),
                Some(tape) => {
                    if !tape.same_tape(&node.tape) {
                        return Err(Error::TapeMismatch);
                    }
                }
            }
        }
    }
    Ok(found)
}
