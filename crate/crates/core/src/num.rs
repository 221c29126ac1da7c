//! Scalar abstraction for the numeric parts of the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar the linear algebra and the models are generic over.
///
/// Implemented for `f32` and `f64`; the concrete pipeline uses
/// [`crate::Scalar`] (`f64`).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Copy + 'static
{
    /// Lossless-enough conversion from `f64` for constants and RNG output.
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any Real")
    }

    /// Conversion from a count.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("usize converts to any Real")
    }
}

impl Real for f32 {}
impl Real for f64 {}
