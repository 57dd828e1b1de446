//! Scalar abstraction shared by the geometry and Gaussian-fitting code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point scalar the numerical core is generic over (`f32` or `f64`).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Lossy conversion to `f64`.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// Tolerance used when checking unit norms and orthogonality.
    ///
    /// `1e-9` for `f64`; a few hundred ulps for lower precision types.
    #[inline]
    fn geometric_tolerance() -> Self {
        let eps = Self::epsilon() * Self::lit(512.0);
        eps.max(Self::lit(1e-9))
    }
}

impl Real for f32 {}
impl Real for f64 {}
