//! Floating-point scalar abstraction shared by every numerical routine.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used for probabilities, rewards and values: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn c(x: f64) -> Self;

    /// Widen to `f64` (exact for both implementors).
    fn f64(self) -> f64;

    /// Smallest tolerance that still means something at this precision.
    ///
    /// Tolerances configured in `f64` are clamped from below by this value
    /// so that the `f32` instantiation does not chase unreachable targets.
    fn resolution() -> Self;

    /// `tol` clamped to this type's resolution.
    fn tol(tol: f64) -> Self {
        Self::c(tol).max(Self::resolution())
    }
}

impl Scalar for f64 {
    #[inline]
    fn c(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
    fn resolution() -> Self {
        1e-14
    }
}

impl Scalar for f32 {
    #[inline]
    fn c(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
    fn resolution() -> Self {
        1e-5
    }
}
