//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records one node per differentiable operation. [`Var`]s created
//! without a tape are plain values: operations on them compute forward results
//! only and keep no history, which is how inference runs.

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod reduce;
mod resize;
mod shape;

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use conv::Conv2dSpec;
pub use resize::resize_bilinear;

/// Per-parent gradient produced by a node's backward closure. `None` means the
/// parent does not need one.
pub(crate) type ParentGrads<T> = Vec<Option<Tensor<T>>>;

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> ParentGrads<T>>;

struct Node<T> {
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

/// Operation history for one forward pass.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Rc<Self> {
        Rc::new(Self { nodes: RefCell::new(Vec::new()) })
    }

    fn push(&self, node: Node<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a leaf whose gradient will be reported by [`Var::backward`].
    pub fn leaf(self: &Rc<Self>, value: Tensor<T>) -> Var<T> {
        self.leaf_shared(Arc::new(value))
    }

    pub fn leaf_shared(self: &Rc<Self>, value: Arc<Tensor<T>>) -> Var<T> {
        let id = self.push(Node { parents: Vec::new(), backward: None });
        Var { value, node: Some((Rc::clone(self), id)) }
    }
}

/// A value, optionally attached to a tape.
#[derive(Clone)]
pub struct Var<T> {
    value: Arc<Tensor<T>>,
    node: Option<(Rc<Tape<T>>, usize)>,
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("shape", &self.shape()).field("node", &self.id()).finish()
    }
}

impl<T: Scalar> Var<T> {
    /// Untracked value.
    pub fn constant(value: Tensor<T>) -> Self {
        Self { value: Arc::new(value), node: None }
    }

    pub fn constant_shared(value: Arc<Tensor<T>>) -> Self {
        Self { value, node: None }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub(crate) fn value_rc(&self) -> Arc<Tensor<T>> {
        Arc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    pub fn id(&self) -> Option<usize> {
        self.node.as_ref().map(|(_, id)| *id)
    }

    /// Detached copy of the value.
    pub fn detach(&self) -> Self {
        Self { value: Arc::clone(&self.value), node: None }
    }

    /// Builds the result of an operation. The backward closure receives the
    /// output gradient and a mask of which parents need gradients.
    pub(crate) fn from_op<F>(value: impl Into<Arc<Tensor<T>>>, parents: &[&Var<T>], backward: F) -> Self
    where
        F: Fn(&Tensor<T>, &[bool]) -> ParentGrads<T> + 'static,
    {
        let value = value.into();
        let tape = parents.iter().find_map(|p| p.node.as_ref().map(|(t, _)| Rc::clone(t)));
        let Some(tape) = tape else {
            return Self::constant_shared(value);
        };
        // Untracked parents get a sentinel id and no gradient.
        let ids = parents.iter().map(|p| p.id().unwrap_or(usize::MAX)).collect();
        let id = tape.push(Node { parents: ids, backward: Some(Box::new(backward)) });
        Self { value, node: Some((tape, id)) }
    }

    /// Backpropagates from this scalar (or any-shaped value with unit seed).
    pub fn backward(&self) -> Grads<T> {
        self.backward_with(Tensor::ones(self.shape().to_vec()))
    }

    /// Backpropagates a given output gradient.
    pub fn backward_with(&self, seed: Tensor<T>) -> Grads<T> {
        let Some((tape, root)) = &self.node else {
            return Grads { map: HashMap::new() };
        };
        assert_eq!(seed.shape(), self.shape(), "seed gradient shape mismatch");
        let mut nodes = tape.nodes.borrow_mut();
        let mut grads: Vec<Option<Tensor<T>>> = (0..=*root).map(|_| None).collect();
        let mut leaves = HashMap::new();
        grads[*root] = Some(seed);
        for id in (0..=*root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &mut nodes[id];
            let Some(backward) = node.backward.take() else {
                leaves.insert(id, g);
                continue;
            };
            let needs: Vec<bool> = node.parents.iter().map(|&p| p != usize::MAX).collect();
            let parent_grads = backward(&g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let (true, Some(pg)) = (p != usize::MAX, pg) else { continue };
                match &mut grads[p] {
                    Some(acc) => {
                        debug_assert_eq!(acc.shape(), pg.shape());
                        for (a, b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += *b;
                        }
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Grads { map: leaves }
    }
}

/// Gradients of leaves reached by a backward pass.
pub struct Grads<T> {
    map: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        var.id().and_then(|id| self.map.get(&id))
    }

    /// Gradient of `var`, zeros if it did not influence the output.
    pub fn get_or_zeros(&self, var: &Var<T>) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.shape().to_vec()))
    }

    pub fn take(&mut self, var: &Var<T>) -> Option<Tensor<T>> {
        var.id().and_then(|id| self.map.remove(&id))
    }
}
