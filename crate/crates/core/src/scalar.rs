//! Scalar abstraction for the numeric core.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar used by the numeric core.
///
/// Implemented for `f32` and `f64`. Tolerances quoted in operation docs
/// assume `f64`; [`prob_tol`] widens the probability-validation tolerance
/// for coarser scalars so `f32` models still validate.
pub trait Scalar:
    Float + FloatConst + NumAssign + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` literal into the scalar type.
pub fn fl<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("literal out of scalar range")
}

/// Tolerance for probability-sum checks: 1e-12 for `f64`, scaled up with
/// machine epsilon for narrower types.
pub fn prob_tol<T: Scalar>() -> T {
    fl::<T>(1e-12).max(T::epsilon() * fl(100.0))
}
