use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating point scalar the controller is generic over (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into the scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn two() -> Self {
        Self::one() + Self::one()
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }

    /// Default convergence tolerance for the optimizer, loosened for low precision types.
    fn default_tolerance() -> Self {
        Self::lit(1e-6).max(Self::epsilon().sqrt())
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Clamps `x` into `[lo, hi]`.
#[inline]
pub fn clamp<T: Scalar>(x: T, lo: T, hi: T) -> T {
    x.max(lo).min(hi)
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle<T: Scalar>(angle: T) -> T {
    let pi = T::lit(std::f64::consts::PI);
    if angle > -pi && angle <= pi {
        return angle;
    }
    let two_pi = pi + pi;
    let wrapped = angle - two_pi * ((angle + pi) / two_pi).floor();
    if wrapped <= -pi {
        wrapped + two_pi
    } else {
        wrapped
    }
}
