//! Dense row-major tensors with tape-free reverse-mode differentiation.
//!
//! Every [`Tensor`] produced by an operation keeps a reference to its inputs
//! and a closure that maps the output gradient onto input gradients, but only
//! when at least one input requires a gradient. [`Tensor::backward`] walks the
//! resulting graph in reverse topological order and accumulates into the
//! gradients of leaf tensors.
//!
//! Graphs are `Rc`-based and therefore local to one thread. Parameter values
//! are held in an `Arc`, so the same weights can seed independent graphs on
//! several worker threads without copying.

mod ops;
mod precision;

pub use ops::DropoutKey;
pub use precision::{precision, set_precision, Precision};

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

type BackwardFn = Box<dyn Fn(&[f64], &[Tensor], &[f64]) -> Vec<Option<Vec<f64>>>>;

struct Backward {
    parents: Vec<Tensor>,
    f: BackwardFn,
}

struct Node {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    backward: Option<Backward>,
}

/// A dense tensor value, optionally tracking gradients.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("data", &self.0.data)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn validate(shape: &[usize], len: usize) -> Result<()> {
        if shape.contains(&0) {
            return Err(TensorError::Invalid {
                op: "tensor",
                msg: format!("extents must be positive, got {shape:?}"),
            });
        }
        if numel(shape) != len {
            return Err(TensorError::Invalid {
                op: "tensor",
                msg: format!("shape {shape:?} does not hold {len} values"),
            });
        }
        Ok(())
    }

    /// Constant tensor (no gradient).
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::validate(shape, data.len())?;
        Ok(Self::raw(shape.to_vec(), Arc::new(data), false, None))
    }

    /// Leaf tensor whose gradient is accumulated by [`Tensor::backward`].
    pub fn leaf(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::shared_leaf(shape, Arc::new(data))
    }

    /// Leaf backed by shared storage; used to bind model parameters into a graph.
    pub fn shared_leaf(shape: &[usize], data: Arc<Vec<f64>>) -> Result<Self> {
        Self::validate(shape, data.len())?;
        Ok(Self::raw(shape.to_vec(), data, true, None))
    }

    /// Constant view of shared storage.
    pub fn shared_const(shape: &[usize], data: Arc<Vec<f64>>) -> Result<Self> {
        Self::validate(shape, data.len())?;
        Ok(Self::raw(shape.to_vec(), data, false, None))
    }

    pub fn scalar(v: f64) -> Self {
        Self::raw(vec![1], Arc::new(vec![v]), false, None)
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len().max(1);
        let data = if data.is_empty() { vec![0.0] } else { data };
        Self::raw(vec![n], Arc::new(data), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = numel(shape);
        Self::raw(shape.to_vec(), Arc::new(vec![0.0; n]), false, None)
    }

    fn raw(
        shape: Vec<usize>,
        data: Arc<Vec<f64>>,
        requires_grad: bool,
        backward: Option<Backward>,
    ) -> Self {
        Tensor(Rc::new(Node {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            backward,
        }))
    }

    /// Result of an operation. A backward closure is attached only if some
    /// input needs a gradient.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        mut data: Vec<f64>,
        parents: &[&Tensor],
        f: impl Fn(&[f64], &[Tensor], &[f64]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Self {
        precision::round_slice(&mut data);
        let tracked = parents.iter().any(|p| p.requires_grad());
        let backward = tracked.then(|| Backward {
            parents: parents.iter().map(|&p| p.clone()).collect(),
            f: Box::new(f),
        });
        Self::raw(shape, Arc::new(data), tracked, backward)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.0.data)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.to_vec()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// A constant copy with the graph history cut off.
    pub fn detach(&self) -> Tensor {
        Self::raw(self.0.shape.clone(), self.data_arc(), false, None)
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    /// Propagates d(self)/d(leaf) into every reachable leaf that requires a
    /// gradient. Leaf gradients accumulate across calls until
    /// [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<usize, Vec<f64>> = HashMap::new();
        pending.insert(self.key(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.key()) else {
                continue;
            };
            match &node.0.backward {
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
                Some(bw) => {
                    let parent_grads = (bw.f)(&g, &bw.parents, node.data());
                    for (parent, pg) in bw.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.numel());
                        match pending.get_mut(&parent.key()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(parent.key(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable from `self` that carry gradients, parents before children.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.key()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(bw) = &node.0.backward {
                for p in &bw.parents {
                    if p.requires_grad() && !visited.contains(&p.key()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}
