use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::tensor::{Elem, Tensor};
use crate::error::{Error, Result};

/// Computes parent gradients from the output gradient. The `needs` mask says
/// which parents require a gradient; entries for the others may be `None`.
pub(crate) type BackwardFn<E> = Box<dyn Fn(&[E], &[bool]) -> Vec<Option<Vec<E>>>>;

struct Node<E> {
    value: Arc<Tensor<E>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<E>>,
    requires_grad: bool,
    param: Option<ParamId>,
}

struct Inner<E> {
    nodes: Vec<Node<E>>,
    params: HashMap<ParamId, usize>,
    consumed: bool,
}

/// Records operations in execution order, which is also a topological order.
pub struct Tape<E: Elem> {
    inner: RefCell<Inner<E>>,
}

impl<E: Elem> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t, E: Elem> {
    pub(crate) tape: &'t Tape<E>,
    pub(crate) id: usize,
}

impl<E: Elem> std::fmt::Debug for Var<'_, E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<E: Elem> Tape<E> {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                params: HashMap::new(),
                consumed: false,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, node: Node<E>) -> Var<'_, E> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(node);
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    /// A leaf that receives a gradient.
    pub fn input(&self, value: Tensor<E>) -> Var<'_, E> {
        self.push_node(Node {
            value: Arc::new(value),
            parents: vec![],
            backward: None,
            requires_grad: true,
            param: None,
        })
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<E>) -> Var<'_, E> {
        self.constant_arc(Arc::new(value))
    }

    pub(crate) fn constant_arc(&self, value: Arc<Tensor<E>>) -> Var<'_, E> {
        self.push_node(Node {
            value,
            parents: vec![],
            backward: None,
            requires_grad: false,
            param: None,
        })
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&self, store: &ParamStore<E>, id: ParamId) -> Var<'_, E> {
        if let Some(&node) = self.inner.borrow().params.get(&id) {
            return Var { tape: self, id: node };
        }
        let p = store.get(id);
        let var = self.push_node(Node {
            value: Arc::clone(&p.value),
            parents: vec![],
            backward: None,
            requires_grad: p.trainable,
            param: Some(id),
        });
        self.inner.borrow_mut().params.insert(id, var.id);
        var
    }

    /// Records an op output. The backward closure is dropped when no parent needs a gradient.
    pub(crate) fn record(&self, value: Tensor<E>, parents: &[Var<'_, E>], backward: BackwardFn<E>) -> Var<'_, E> {
        self.record_arc(Arc::new(value), parents, backward)
    }

    pub(crate) fn record_arc(
        &self,
        value: Arc<Tensor<E>>,
        parents: &[Var<'_, E>],
        backward: BackwardFn<E>,
    ) -> Var<'_, E> {
        let ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let requires_grad = {
            let inner = self.inner.borrow();
            ids.iter().any(|&i| inner.nodes[i].requires_grad)
        };
        self.push_node(Node {
            value,
            parents: ids,
            backward: requires_grad.then_some(backward),
            requires_grad,
            param: None,
        })
    }

    pub(crate) fn value(&self, id: usize) -> Arc<Tensor<E>> {
        Arc::clone(&self.inner.borrow().nodes[id].value)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].requires_grad
    }

    /// Reverse pass from a scalar loss. The tape is consumed: its nodes are
    /// released and a second call fails.
    pub fn backward(&self, loss: Var<'_, E>) -> Result<Gradients<E>> {
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::TapeConsumed);
        }
        let root = &inner.nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let n = loss.id + 1;
        let mut grads: Vec<Option<Vec<E>>> = (0..n).map(|_| None).collect();
        grads[loss.id] = Some(vec![E::one()]);
        let mut out = Gradients {
            nodes: HashMap::new(),
            params: HashMap::new(),
        };
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &inner.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.backward {
                Some(bw) => {
                    let needs: Vec<bool> = node
                        .parents
                        .iter()
                        .map(|&p| inner.nodes[p].requires_grad)
                        .collect();
                    let parent_grads = bw(&g, &needs);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                        let Some(pg) = pg else { continue };
                        if !need {
                            continue;
                        }
                        match &mut grads[p] {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a = *a + *b),
                            slot => *slot = Some(pg),
                        }
                    }
                }
                None => {
                    let t = Tensor::new(node.value.shape(), g).expect("gradient matches value shape");
                    if let Some(pid) = node.param {
                        out.params.insert(pid, t.clone());
                    }
                    out.nodes.insert(i, t);
                }
            }
        }
        inner.consumed = true;
        inner.nodes.clear();
        inner.params.clear();
        Ok(out)
    }
}

/// Gradients collected by one backward pass, for leaves only.
#[derive(Debug)]
pub struct Gradients<E> {
    nodes: HashMap<usize, Tensor<E>>,
    params: HashMap<ParamId, Tensor<E>>,
}

impl<E: Elem> Gradients<E> {
    /// Gradient of an input leaf; `None` if it did not influence the loss.
    pub fn wrt(&self, var: Var<'_, E>) -> Option<&Tensor<E>> {
        self.nodes.get(&var.id)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<E>> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<E>)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    /// Parameter gradients in registration order.
    pub fn into_params(self) -> Vec<(ParamId, Tensor<E>)> {
        let mut v: Vec<_> = self.params.into_iter().collect();
        v.sort_unstable_by_key(|(id, _)| *id);
        v
    }
}

impl<'t, E: Elem> Var<'t, E> {
    pub fn value(&self) -> Arc<Tensor<E>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.inner.borrow().nodes[self.id].value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    pub fn tape(&self) -> &'t Tape<E> {
        self.tape
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, E> {
        self.tape.constant_arc(self.value())
    }
}
