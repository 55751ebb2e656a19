//! Dense f64 tensors with taped reverse-mode differentiation.
//!
//! Small by design: rank 1-3 tensors, a handful of operations, and a
//! [`Tape`] that records backward rules in execution order. Everything the
//! Q-networks need and nothing more.

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::rc::Rc;

use thiserror::Error;

mod check;
mod ops;
mod optim;
mod sparse;

pub use check::{finite_difference_grad, max_rel_err};
pub use optim::{xavier_uniform, AdamState};
pub use sparse::SparseMatrix;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got {0} elements")]
    NonScalarLoss(usize),
    #[error("non-finite value passed to {0}")]
    NonFinite(&'static str),
    #[error("smooth_l1 beta must be positive, got {0}")]
    InvalidBeta(f64),
    #[error("adam_step: parameter {0} has no gradient")]
    MissingGrad(usize),
    #[error("adam_step: state tracks {state} parameters, got {given}")]
    ParamCountMismatch { state: usize, given: usize },
}

struct TensorInner {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: Cell<bool>,
}

/// A shared dense array of f64 values, optionally carrying a gradient.
///
/// Cloning a `Tensor` is cheap and aliases the same storage; training code
/// relies on this so that a parameter updated by the optimizer is seen by
/// every expression that captured it.
#[derive(Clone)]
pub struct Tensor(Rc<TensorInner>);

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor(Rc::new(TensorInner {
            shape: shape.to_vec(),
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: Cell::new(false),
        }))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_vec(shape, vec![0.0; n])
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(&[1], vec![v])
    }

    /// Marks the tensor as trainable and returns it.
    pub fn param(self) -> Self {
        self.0.requires_grad.set(true);
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad.get()
    }

    pub fn set_requires_grad(&self, flag: bool) {
        self.0.requires_grad.set(flag);
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.0.data.borrow_mut()
    }

    /// Item of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of {} elements", self.numel());
        self.0.data.borrow()[0]
    }

    /// Clone of the gradient, if any has been accumulated.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    fn seed_unit_grad(&self) {
        *self.0.grad.borrow_mut() = Some(vec![1.0; self.numel()]);
    }

    /// Overwrites this tensor's values with `src`'s (shapes must match).
    pub fn copy_from(&self, src: &Tensor) {
        assert_eq!(self.shape(), src.shape(), "copy_from shape mismatch");
        self.0.data.borrow_mut().copy_from_slice(&src.0.data.borrow());
    }

    /// True if the two handles alias the same storage.
    pub fn same_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad.get())
            .field("data", &self.0.data.borrow())
            .finish()
    }
}

struct Node {
    backward: Box<dyn Fn()>,
}

/// Records operations so their gradients can be replayed in reverse.
///
/// A tape is single-threaded; independent computations get independent
/// tapes. [`Tape::no_grad`] evaluates forward passes without recording.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), recording: true }
    }

    /// A tape that computes values but records no backward rules.
    pub fn no_grad() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), recording: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn record(&self, out: &Tensor, backward: impl Fn() + 'static) {
        if self.recording && out.requires_grad() {
            self.nodes.borrow_mut().push(Node { backward: Box::new(backward) });
        }
    }

    fn out_flag(&self, inputs: &[&Tensor]) -> bool {
        self.recording && inputs.iter().any(|t| t.requires_grad())
    }

    /// Backpropagates from a scalar loss through every recorded node.
    ///
    /// Gradients accumulate into `grad` slots; repeated calls add up unless
    /// the grads are zeroed in between.
    pub fn backward(&self, loss: &Tensor) -> Result<(), TensorError> {
        if loss.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss.numel()));
        }
        loss.seed_unit_grad();
        for node in self.nodes.borrow().iter().rev() {
            (node.backward)();
        }
        Ok(())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_and_data() {
        let t = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.numel(), 6);
        assert!(!t.requires_grad());
    }

    #[test]
    fn grad_accumulates_across_backward_calls() {
        let tape = Tape::new();
        let w = Tensor::from_vec(&[2], vec![3.0, 4.0]).param();
        let loss = tape.sum(&w).unwrap();
        tape.backward(&loss).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, 2.0]);
        w.zero_grad();
        tape.backward(&loss).unwrap();
        assert_eq!(w.grad().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let w = Tensor::from_vec(&[2], vec![1.0, 2.0]).param();
        let y = tape.tanh(&w).unwrap();
        assert!(matches!(tape.backward(&y), Err(TensorError::NonScalarLoss(2))));
    }

    #[test]
    fn no_grad_tape_records_nothing() {
        let tape = Tape::no_grad();
        let w = Tensor::from_vec(&[2], vec![1.0, 2.0]).param();
        let y = tape.tanh(&w).unwrap();
        assert!(tape.is_empty());
        assert!(!y.requires_grad());
    }

    #[test]
    fn zero_times_function_has_zero_grad() {
        let tape = Tape::new();
        let w = Tensor::from_vec(&[2, 2], vec![1.0, -2.0, 0.5, 3.0]).param();
        let y = tape.tanh(&w).unwrap();
        let z = tape.scale(&y, 0.0).unwrap();
        let loss = tape.sum(&z).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(w.grad().unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn sum_of_matrix_grad_is_ones() {
        let tape = Tape::new();
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).param();
        let loss = tape.sum(&w).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(w.grad().unwrap(), vec![1.0; 4]);
    }
}
