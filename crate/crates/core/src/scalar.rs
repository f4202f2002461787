use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar used by the representation-theory code.
///
/// Implemented for `f32` and `f64`. The neural-network stack is fixed to
/// `f64`; everything below it (groups, irreps, reps, linear algebra) is
/// generic so the algebra can be exercised at either precision.
pub trait Real:
    Float + FromPrimitive + NumAssign + Sum + Default + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` constant.
    #[inline]
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn two_pi() -> Self {
        Self::c(std::f64::consts::TAU)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Wrap an angle into `[0, 2π)`.
pub fn wrap_angle<T: Real>(theta: T) -> T {
    let tau = T::two_pi();
    let mut r = theta - tau * (theta / tau).floor();
    if r >= tau {
        r -= tau;
    }
    if r < T::zero() {
        r = T::zero();
    }
    r
}
