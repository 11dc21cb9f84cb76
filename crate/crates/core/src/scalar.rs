use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, Num, Signed, ToPrimitive};

/// Field-like scalar: enough for building label distributions and binning.
///
/// Implemented for `f32`, `f64` and `Ratio<i64>`.
pub trait Scalar:
    Num + Signed + Copy + PartialOrd + FromPrimitive + Debug + Send + Sync + 'static
{
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// Tolerance conversion; rationals get the nearest representable value.
    fn tol(v: f64) -> Self {
        Self::from_f64(v).expect("tolerance representable in scalar type")
    }
}

impl<T> Scalar for T where
    T: Num + Signed + Copy + PartialOrd + FromPrimitive + Debug + Send + Sync + 'static
{
}

/// Floating-point scalar used for logits, losses and metrics.
pub trait Real:
    Scalar + Float + FloatConst + ToPrimitive + Sum + AddAssign + SubAssign + MulAssign + DivAssign
{
}

impl<T> Real for T where
    T: Scalar + Float + FloatConst + ToPrimitive + Sum + AddAssign + SubAssign + MulAssign + DivAssign
{
}
