use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point element type used throughout the crate.
///
/// Implemented for `f32`, `f64` and [`crate::dual::Dual`] so that the same
/// geometry code produces values and exact Jacobians.
pub trait Scalar:
    'static + Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync
{
    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    /// Real part as `f64` (drops derivative information for duals).
    #[inline]
    fn re(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
