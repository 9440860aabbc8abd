//! Scalar abstraction shared by the deterministic numerics.
//!
//! Everything that is pure arithmetic (degree distributions, density and
//! covariance evolution, scaling laws, fitting) is written against
//! [`Scalar`], so it runs in `f64` for production use and in `f32` when a
//! cheap cross-precision check is wanted. Simulation code works with
//! integers and `f64` probabilities directly.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal; panics only if the target type cannot
    /// represent finite `f64` values, which never happens for `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Absolute tolerance below which two values of this type are
    /// indistinguishable after a few dozen arithmetic operations.
    #[inline]
    fn noise_floor() -> Self {
        Self::epsilon() * Self::lit(64.0)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
