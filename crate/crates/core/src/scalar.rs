//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real floating-point type the finite element pipeline is generic over.
///
/// Implemented for `f32` and `f64`. Tolerances that depend on the working
/// precision (the "exact" solve threshold, geometric containment slack) are
/// associated constants so algorithms never hard-code an `f64` epsilon.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Relative residual an exact solve must reach.
    const EXACT_SOLVE_TOL: f64;
    /// Slack for point-in-triangle tests in barycentric coordinates.
    const BARY_TOL: f64;

    /// Converts an `f64` literal into `Self`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    const EXACT_SOLVE_TOL: f64 = 1e-12;
    const BARY_TOL: f64 = 1e-12;
}

impl Scalar for f32 {
    const EXACT_SOLVE_TOL: f64 = 1e-5;
    const BARY_TOL: f64 = 1e-5;
}

/// Dot product of two equally long slices.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

#[inline]
pub fn norm_inf<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}
