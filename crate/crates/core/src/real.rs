//! Scalar abstraction so the whole stack runs in f32 (production) or f64
//! (high-precision gradient checking) without duplicated code.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating-point scalar usable everywhere in the model.
pub trait Real:
    LinalgScalar
    + ScalarOperand
    + Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Name used in checkpoint headers ("f32" / "f64").
    const DTYPE: &'static str;

    /// Conversion from an f64 constant; panics only for values outside the
    /// type's range, which never holds for the literals used here.
    fn of_f64(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 constant not representable")
    }

    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar convertible to f64")
    }
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";
}

/// Shorthand conversion from an f64 literal into the active scalar type.
pub fn fr<F: Real>(x: f64) -> F {
    F::of_f64(x)
}
