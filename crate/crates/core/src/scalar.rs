//! Scalar abstraction shared by the differentiable parts of the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the autodiff engine and the models are generic over.
///
/// Implemented for `f32` and `f64`. The training pipeline itself runs in
/// double precision (see the aliases at the crate root).
pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal; every finite `f64` is representable (possibly rounded).
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
