//! Named parameter tensors with gradient buffers.

use ndarray::{Array, Dimension};

use super::Scalar;

/// Whether a tensor is updated by the optimizer or carried as state
/// (batch-norm running statistics).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    State,
}

/// A value tensor paired with its gradient accumulator.
///
/// `used` marks whether the current backward pass wrote into `grad`;
/// the optimizer skips untouched parameters so a loss that exercises only
/// one head leaves the other head bitwise unchanged.
#[derive(Debug, Clone)]
pub struct Param<S, D: Dimension> {
    pub value: Array<S, D>,
    pub grad: Array<S, D>,
    pub used: bool,
}

impl<S: Scalar, D: Dimension> Param<S, D> {
    pub fn new(value: Array<S, D>) -> Self {
        let grad = Array::zeros(value.raw_dim());
        Param {
            value,
            grad,
            used: false,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(S::zero());
        self.used = false;
    }

    /// Accumulate `g` into the gradient buffer and mark the param used.
    pub fn accumulate(&mut self, g: &Array<S, D>) {
        self.grad += g;
        self.used = true;
    }
}

/// Dimension-erased view of a parameter used by optimizers, checkpointing
/// and finite-difference tests. All arrays in this crate are standard
/// layout, so slice access is always available.
pub trait ParamTensor<S> {
    fn dims(&self) -> Vec<usize>;
    fn value(&self) -> &[S];
    fn value_mut(&mut self) -> &mut [S];
    fn grad(&self) -> &[S];
    fn used(&self) -> bool;
    fn zero(&mut self);
}

impl<S: Scalar, D: Dimension> ParamTensor<S> for Param<S, D> {
    fn dims(&self) -> Vec<usize> {
        self.value.shape().to_vec()
    }
    fn value(&self) -> &[S] {
        self.value.as_slice().expect("standard layout")
    }
    fn value_mut(&mut self) -> &mut [S] {
        self.value.as_slice_mut().expect("standard layout")
    }
    fn grad(&self) -> &[S] {
        self.grad.as_slice().expect("standard layout")
    }
    fn used(&self) -> bool {
        self.used
    }
    fn zero(&mut self) {
        self.zero_grad();
    }
}

/// Walk every tensor of a module, depth-first, with stable names.
pub trait VisitParams<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, ParamKind, &mut dyn ParamTensor<S>));

    fn zero_grads(&mut self) {
        self.visit_params("", &mut |_, _, p| p.zero());
    }

    /// Trainable scalar count.
    fn num_trainable(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, kind, p| {
            if kind == ParamKind::Trainable {
                n += p.value().len();
            }
        });
        n
    }
}

/// Join a visitor prefix with a local tensor name.
pub fn join_name(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
