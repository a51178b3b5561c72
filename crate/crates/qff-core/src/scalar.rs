//! Floating-point abstraction so the same code runs in `f32` (training) and
//! `f64` (gradient-check) precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Element type of tensors, parameters, and encoders.
///
/// Implemented for `f32` and `f64`. Training runs in `f32`; gradient checks
/// and the finite-difference oracles run in `f64`.
pub trait Scalar:
    Float
    + NumAssignOps
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Display
    + Debug
    + Sum
    + Send
    + Sync
    + 'static
{
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn as_f64(self) -> f64 {
        self
    }
}

/// Shorthand for converting an `f64` literal or intermediate into `F`.
#[inline]
pub fn c<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("f64 value representable in scalar type")
}
