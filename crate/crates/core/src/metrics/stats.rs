use serde::{Deserialize, Serialize};

use crate::num::Scalar;

/// Summary statistics; all `None` for an empty input. `std` is the
/// population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate<T> {
    pub n: usize,
    pub mean: Option<T>,
    pub std: Option<T>,
    pub min: Option<T>,
    pub max: Option<T>,
}

pub fn aggregate<T: Scalar>(scores: &[T]) -> Aggregate<T> {
    if scores.is_empty() {
        return Aggregate {
            n: 0,
            mean: None,
            std: None,
            min: None,
            max: None,
        };
    }
    let n = T::from_count(scores.len());
    let mean = scores.iter().copied().sum::<T>() / n;
    let var = scores.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    let min = scores.iter().copied().fold(T::infinity(), T::min);
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    Aggregate {
        n: scores.len(),
        mean: Some(mean),
        std: Some(var.sqrt()),
        min: Some(min),
        max: Some(max),
    }
}
