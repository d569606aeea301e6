//! Minimal CPU neural-network substrate: parameter tensors, convolution,
//! pooling, normalization and loss math with hand-written backward passes.
//!
//! All layers are generic over [`Scalar`] so the same code runs in `f32`
//! for training and in `f64` for finite-difference verification.

pub mod batchnorm;
pub mod conv;
pub mod layers;
pub mod loss;
pub mod param;

pub use batchnorm::BatchNorm2d;
pub use conv::Conv2d;
pub use layers::{global_avg_pool, global_avg_pool_backward, relu, relu_backward, Dropout, Linear, MaxPool2, UpsampleNearest2};
pub use param::{Param, ParamKind, ParamTensor, VisitParams};

use ndarray::{Array4, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Element type for network math.
pub trait Scalar:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + 'static
{
    /// Lossy conversion from `f64` (named to avoid `FromPrimitive` clashes).
    fn sc(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts")
    }
    fn usz(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("usize converts")
    }
    fn to_f64_(self) -> f64;
}

impl Scalar for f32 {
    fn to_f64_(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn to_f64_(self) -> f64 {
        self
    }
}

/// Batch of images or activations, shape `(B, H, W, C)`.
pub type Batch4<S> = Array4<S>;

/// Error if any element of `data` is non-finite; `what` names the producer.
pub fn ensure_finite<'a, S: Scalar>(data: impl IntoIterator<Item = &'a S>, what: &str) -> Result<()> {
    for &v in data {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite value in {what}")));
        }
    }
    Ok(())
}
