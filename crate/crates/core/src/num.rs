//! Scalar abstraction for the metric math.
//!
//! Similarity, aggregation and the BLEU score are written once against
//! [`Scalar`] and instantiated for `f32` and `f64`. The evaluation pipeline
//! itself always runs on `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar usable by the metric code: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Tolerance used when checking that a set of weights sums to one.
    fn weight_tolerance() -> Self;

    /// Lossy conversion from `f64`; used for literals in generic code.
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("f64 literal representable in scalar type")
    }

    fn from_count(count: usize) -> Self {
        Self::from_usize(count).expect("count representable in scalar type")
    }
}

impl Scalar for f32 {
    fn weight_tolerance() -> Self {
        1e-6
    }
}

impl Scalar for f64 {
    fn weight_tolerance() -> Self {
        1e-12
    }
}
