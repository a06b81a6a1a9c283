//! Dense f64 tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is a reference-counted graph node. Operations record a backward
//! closure and their inputs; [`Tensor::backward`] visits nodes in reverse
//! creation order, which is a valid reverse topological order because every
//! node is created after its inputs. Graphs are confined to one thread.

mod checkpoint;
pub mod gradcheck;
mod ops;
mod optim;
mod param;

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use optim::{adam_step, Adam, AdamConfig};
pub use param::{ParamStore, Parameter};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

type BackwardFn = Box<dyn Fn(&[f64], &[Tensor])>;

struct Node {
    id: usize,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
    ) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            parents,
            backward,
        }))
    }

    /// Constant tensor (no gradient).
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(Error::shape("from_vec", shape, &[data.len()]));
        }
        Ok(Self::build(shape.to_vec(), data, false, Vec::new(), None))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::build(shape.to_vec(), vec![0.0; numel(shape)], false, Vec::new(), None)
    }

    pub fn scalar(v: f64) -> Tensor {
        Self::build(vec![], vec![v], false, Vec::new(), None)
    }

    /// Leaf that accumulates gradients.
    pub fn leaf(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(Error::shape("leaf", shape, &[data.len()]));
        }
        Ok(Self::build(shape.to_vec(), data, true, Vec::new(), None))
    }

    /// Result of an operation; tracks gradients iff any input does.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: impl Fn(&[f64], &[Tensor]) + 'static,
    ) -> Tensor {
        if parents.iter().any(|p| p.requires_grad()) {
            Self::build(shape, data, true, parents, Some(Box::new(backward)))
        } else {
            Self::build(shape, data, false, Vec::new(), None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Overwrites leaf values in place (optimizer updates, finite differences).
    pub fn set_data(&self, values: &[f64]) {
        let mut d = self.0.data.borrow_mut();
        assert_eq!(d.len(), values.len(), "set_data length mismatch");
        d.copy_from_slice(values);
    }

    pub(crate) fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.0.data.borrow_mut());
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn same_node(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// Copy of the values with no graph attached.
    pub fn detach(&self) -> Tensor {
        Self::build(self.shape().to_vec(), self.to_vec(), false, Vec::new(), None)
    }

    pub(crate) fn accumulate(&self, f: impl FnOnce(&mut [f64])) {
        if !self.0.requires_grad {
            return;
        }
        let mut g = self.0.grad.borrow_mut();
        let buf = g.get_or_insert_with(|| vec![0.0; numel(&self.0.shape)]);
        f(buf);
    }

    /// Adds `∂self/∂x` to the gradient of every leaf `x` reachable from `self`.
    ///
    /// Leaf gradients accumulate across calls until [`zero_grad`](Self::zero_grad);
    /// intermediate gradients are released once propagated.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalar(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.0.id) {
                continue;
            }
            for p in &t.0.parents {
                if p.requires_grad() && !seen.contains(&p.0.id) {
                    stack.push(p.clone());
                }
            }
            order.push(t);
        }
        order.sort_by_key(|t| std::cmp::Reverse(t.0.id));
        self.accumulate(|g| g[0] += 1.0);
        for t in &order {
            let Some(backward) = &t.0.backward else {
                continue;
            };
            let grad = t.0.grad.borrow_mut().take();
            if let Some(grad) = grad {
                backward(&grad, &t.0.parents);
            }
        }
        Ok(())
    }
}
