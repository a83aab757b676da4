use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::Scalar;
use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Computes the adjoint of each parent given the adjoint of the output.
///
/// The second argument flags which parents need a gradient; entries for the
/// others may be `None`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync>;

pub(crate) struct GradFn<T: Scalar> {
    pub(crate) op: &'static str,
    pub(crate) parents: Vec<Tensor<T>>,
    pub(crate) backward: BackwardFn<T>,
}

struct Node<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    grad_fn: Option<GradFn<T>>,
}

/// Dense row-major n-dimensional array that records the operations applied
/// to it, so a scalar result can be differentiated with [`Tensor::backward`].
///
/// Tensors are immutable values: ops return new tensors and cloning a tensor
/// is a reference-count bump. Only the gradient buffer is interior-mutable.
pub struct Tensor<T: Scalar>(Arc<Node<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<T> = self.0.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("data", &preview)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.grad_fn.as_ref().map(|g| g.op))
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn from_node(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        grad_fn: Option<GradFn<T>>,
    ) -> Self {
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            grad_fn,
        }))
    }

    /// Constant leaf tensor (no gradient tracking).
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::leaf(shape, data, false)
    }

    /// Trainable leaf tensor.
    pub fn parameter(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::leaf(shape, data, true)
    }

    pub fn leaf(shape: &[usize], data: Vec<T>, requires_grad: bool) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape {
                op: "tensor",
                shape: shape.to_vec(),
                reason: "dimensions must be positive".into(),
            });
        }
        if numel(shape) != data.len() {
            return Err(Error::InvalidShape {
                op: "tensor",
                shape: shape.to_vec(),
                reason: format!("expected {} values, got {}", numel(shape), data.len()),
            });
        }
        Ok(Self::from_node(shape.to_vec(), data, requires_grad, None))
    }

    pub fn scalar(value: T) -> Self {
        Self::from_node(vec![], vec![value], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::from_node(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    /// Result of an op. Records `backward` only when some parent is tracked.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn {
            op,
            parents,
            backward,
        });
        Self::from_node(shape, data, requires_grad, grad_fn)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Name of the op that produced this tensor, if it is on the tape.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.op)
    }

    /// Copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.lock().expect("grad lock").clone()
    }

    pub fn has_grad(&self) -> bool {
        self.0.grad.lock().expect("grad lock").is_some()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock") = None;
    }

    /// Same values, cut from the tape.
    pub fn detach(&self) -> Self {
        Self::from_node(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    /// Same values as a fresh leaf that tracks gradients.
    pub fn detach_as_parameter(&self) -> Self {
        Self::from_node(self.0.shape.clone(), self.0.data.clone(), true, None)
    }

    pub fn same_storage(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    fn accumulate_grad(&self, g: Vec<T>) {
        let mut slot = self.0.grad.lock().expect("grad lock");
        match slot.as_mut() {
            Some(existing) => {
                for (e, v) in existing.iter_mut().zip(g) {
                    *e += v;
                }
            }
            None => *slot = Some(g),
        }
    }

    /// Reverse-mode sweep from this scalar. Adjoints are added to the `grad`
    /// buffer of every tracked tensor reachable from here; call
    /// [`Tensor::zero_grad`] between sweeps to avoid accumulation.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Post-order DFS; reversed it is a valid reverse-topological order.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = &t.0.grad_fn {
                for p in gf.parents.iter().rev() {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }

        let mut adjoints: HashMap<u64, Vec<T>> = HashMap::new();
        adjoints.insert(self.id(), vec![T::one()]);
        for node in order.iter().rev() {
            let Some(adj) = adjoints.remove(&node.id()) else {
                continue;
            };
            if let Some(gf) = &node.0.grad_fn {
                let needs: Vec<bool> = gf.parents.iter().map(|p| p.requires_grad()).collect();
                let grads = (gf.backward)(&adj, &needs);
                debug_assert_eq!(grads.len(), gf.parents.len(), "{}", gf.op);
                for ((parent, need), g) in gf.parents.iter().zip(&needs).zip(grads) {
                    if !need {
                        continue;
                    }
                    let Some(g) = g else { continue };
                    debug_assert_eq!(g.len(), parent.numel(), "{}", gf.op);
                    match adjoints.get_mut(&parent.id()) {
                        Some(acc) => {
                            for (a, v) in acc.iter_mut().zip(g) {
                                *a += v;
                            }
                        }
                        None => {
                            adjoints.insert(parent.id(), g);
                        }
                    }
                }
            }
            node.accumulate_grad(adj);
        }
        Ok(())
    }
}
