//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar the planner is generic over: `f32` or `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    /// Lossy conversion to `f64`, used for logging and export.
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Wraps an angle into `(-pi, pi]`. An input of exactly `-pi` maps to `+pi`.
pub fn wrap_angle<T: Scalar>(theta: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut r = theta - two_pi * (theta / two_pi).floor();
    // r in [0, 2pi), modulo rounding at the upper edge
    if r >= two_pi {
        r = r - two_pi;
    }
    if r > T::PI() {
        r - two_pi
    } else {
        r
    }
}
