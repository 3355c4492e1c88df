use crate::domain::EmbeddingVector;
use crate::error::{Error, Result};
use crate::num::Scalar;

/// Cosine of the angle between two feature vectors: `a·b / (‖a‖‖b‖)`.
///
/// The quotient is clamped to `[-1, 1]` since rounding can overshoot the
/// boundary by an ulp or two.
pub fn cosine_similarity<T: Scalar>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> Result<T> {
    cosine_slices(a.values(), b.values())
}

pub fn cosine_slices<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (mut dot, mut norm_a, mut norm_b) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        dot = dot + x * y;
        norm_a = norm_a + x * x;
        norm_b = norm_b + y * y;
    }
    // Fold the norms separately so that very small or very large vectors
    // do not underflow or overflow in the product of squared norms.
    let denom = norm_a.sqrt() * norm_b.sqrt();
    if denom == T::zero() || !denom.is_finite() {
        return Err(Error::DegenerateVector);
    }
    let cos = dot / denom;
    Ok(cos.max(-T::one()).min(T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(values: &[f64]) -> EmbeddingVector<f64> {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn identical_vectors() {
        let a = v(&[0.3, -1.2, 4.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_vectors() {
        assert_eq!(
            cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(),
            0.0
        );
    }

    #[test]
    fn opposite_vectors() {
        let c = cosine_similarity(&v(&[1.0, 2.0, 3.0]), &v(&[-1.0, -2.0, -3.0])).unwrap();
        assert!((c + 1.0).abs() < 1e-15);
    }

    #[test]
    fn known_value() {
        // 32 / (sqrt(14) * sqrt(77))
        let c = cosine_similarity(&v(&[1.0, 2.0, 3.0]), &v(&[4.0, 5.0, 6.0])).unwrap();
        assert!((c - 0.974_631_846_197_076_2).abs() < 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let a = EmbeddingVector::new(vec![1.0f32, 2.0, 3.0]).unwrap();
        let b = EmbeddingVector::new(vec![4.0f32, 5.0, 6.0]).unwrap();
        assert!((cosine_similarity(&a, &b).unwrap() - 0.974_631_8).abs() < 1e-6);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            cosine_similarity(&v(&[1.0, 2.0]), &v(&[1.0, 2.0, 3.0])),
            Err(Error::DimensionMismatch { left: 2, right: 3 })
        ));
    }

    #[test]
    fn zero_norm_is_degenerate() {
        assert!(matches!(
            cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 2.0])),
            Err(Error::DegenerateVector)
        ));
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..64).prop_flat_map(|n| {
            (
                prop::collection::vec(-100.0f64..100.0, n),
                prop::collection::vec(-100.0f64..100.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded((a, b) in pair()) {
            prop_assume!(a.iter().any(|x| *x != 0.0) && b.iter().any(|x| *x != 0.0));
            let ab = cosine_slices(&a, &b).unwrap();
            let ba = cosine_slices(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn positive_scale_invariant((a, b) in pair()) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
            let base = cosine_slices(&a, &b).unwrap();
            for alpha in [1e-6, 1.0, 1e6] {
                let scaled: Vec<f64> = a.iter().map(|x| x * alpha).collect();
                prop_assert!((cosine_slices(&scaled, &b).unwrap() - base).abs() <= 1e-9);
            }
        }
    }
}
