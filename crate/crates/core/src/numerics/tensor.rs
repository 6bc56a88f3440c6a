use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Vector-Jacobian product of one node: given the output gradient, the
/// output value and the parent tensors, returns one optional gradient per
/// parent (same length and order as the parents).
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[f64], &[Tensor]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Dense row-major array with optional gradient tracking.
///
/// Values are stored as `f64`. Model parameters are kept as `f32` outside the
/// graph (see `model::ParamSet`) and widened when bound, so every
/// accumulation runs in 64-bit.
///
/// The graph is built dynamically: each operation on a tensor that requires a
/// gradient records its parents and a backward closure. Calling
/// [`Tensor::backward`] on a scalar walks the graph in reverse creation order.
/// Gradients accumulate across repeated `backward` calls until
/// [`Tensor::zero_grad`] is called.
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

pub(crate) fn numel(shape: &[usize]) -> usize {
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
            data,
            requires_grad,
            grad: RefCell::new(None),
            parents,
            backward,
        }))
    }

    /// Leaf tensor without gradient tracking.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("extents must be positive, got {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {} values, got {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(Tensor::build(shape.to_vec(), data, false, Vec::new(), None))
    }

    /// Leaf tensor that collects a gradient.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::new(shape, data)?;
        Ok(Tensor::build(t.0.shape.clone(), t.0.data.clone(), true, Vec::new(), None))
    }

    pub fn from_f32(shape: &[usize], data: &[f32], requires_grad: bool) -> Result<Tensor> {
        let wide = data.iter().map(|&v| v as f64).collect();
        if requires_grad {
            Tensor::param(shape, wide)
        } else {
            Tensor::new(shape, wide)
        }
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::build(vec![1], vec![value], false, Vec::new(), None)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::build(shape.to_vec(), vec![0.0; numel(shape)], false, Vec::new(), None)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::build(shape.to_vec(), vec![1.0; numel(shape)], false, Vec::new(), None)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::build(shape.to_vec(), vec![value; numel(shape)], false, Vec::new(), None)
    }

    pub fn eye(n: usize) -> Tensor {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor::build(vec![n, n], data, false, Vec::new(), None)
    }

    /// Result of an operation; tracked iff any parent requires a gradient.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        let tracked = parents.iter().any(|p| p.requires_grad());
        if tracked {
            Tensor::build(shape, data, true, parents, Some(backward))
        } else {
            Tensor::build(shape, data, false, Vec::new(), None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.0.data.iter().map(|&v| v as f32).collect()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.0.data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::build(self.0.shape.clone(), self.0.data.clone(), false, Vec::new(), None)
    }

    pub fn is_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    /// Reverse-mode sweep from this scalar.
    ///
    /// Every tracked tensor reachable from `self` (including intermediates)
    /// receives its gradient; existing gradients are accumulated into.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Contract(
                "backward called on a tensor that does not reach any tracked input".into(),
            ));
        }

        // Parents are always created before children, so descending id is a
        // valid reverse topological order.
        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.0.id) {
                continue;
            }
            for p in &t.0.parents {
                stack.push(p.clone());
            }
            order.push(t);
        }
        order.sort_by(|a, b| b.0.id.cmp(&a.0.id));

        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.0.id, vec![1.0]);
        for node in &order {
            let Some(g) = pending.remove(&node.0.id) else {
                continue;
            };
            if let Some(backward) = &node.0.backward {
                let parent_grads = backward(&g, &node.0.data, &node.0.parents);
                debug_assert_eq!(parent_grads.len(), node.0.parents.len());
                for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !parent.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), parent.numel());
                    match pending.get_mut(&parent.0.id) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(parent.0.id, pg);
                        }
                    }
                }
            }
            let mut slot = node.0.grad.borrow_mut();
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }
}
