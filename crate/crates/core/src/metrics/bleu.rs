//! Sentence-level BLEU without smoothing.
//!
//! `BLEU = BP · exp(Σ w_n · log p_n)` where `p_n` is the clipped n-gram
//! precision and `BP` the brevity penalty against the effective reference
//! length (the reference length closest to the candidate, ties going to
//! the shorter reference).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tokenize::{tokenize, TokenSequence};
use crate::error::{Error, Result};
use crate::num::Scalar;

/// Maximum n-gram order and per-order weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuParams<T> {
    weights: Vec<T>,
}

impl<T: Scalar> BleuParams<T> {
    /// Weights must be positive and sum to one; their count sets the max order.
    pub fn new(weights: Vec<T>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Invalid(
                "BLEU needs at least one n-gram order".into(),
            ));
        }
        if weights.iter().any(|w| *w <= T::zero() || !w.is_finite()) {
            return Err(Error::Invalid("BLEU weights must be positive".into()));
        }
        let sum: T = weights.iter().copied().sum();
        if (sum - T::one()).abs() > T::weight_tolerance() {
            return Err(Error::Invalid(format!("BLEU weights sum to {sum}, not 1")));
        }
        Ok(BleuParams { weights })
    }

    pub fn uniform(max_order: usize) -> Result<Self> {
        if max_order == 0 {
            return Err(Error::Invalid(
                "BLEU needs at least one n-gram order".into(),
            ));
        }
        let w = T::one() / T::from_count(max_order);
        Self::new(vec![w; max_order])
    }

    pub fn max_order(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }
}

impl<T: Scalar> Default for BleuParams<T> {
    fn default() -> Self {
        Self::uniform(4).expect("uniform 4-gram weights are valid")
    }
}

/// Clipped n-gram matches over candidate n-grams, as an exact integer pair.
/// `total == 0` means the candidate has no n-grams of this order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramPrecision {
    pub matched: u64,
    pub total: u64,
}

impl NgramPrecision {
    pub fn is_defined(&self) -> bool {
        self.total > 0
    }

    pub fn value<T: Scalar>(&self) -> Option<T> {
        self.is_defined()
            .then(|| T::from_u64(self.matched).unwrap() / T::from_u64(self.total).unwrap())
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Each distinct candidate n-gram counts at most as often as it appears in
/// the single reference where it is most frequent.
pub fn modified_ngram_precision(
    candidate: &TokenSequence,
    references: &[TokenSequence],
    n: usize,
) -> Result<NgramPrecision> {
    if n == 0 {
        return Err(Error::Invalid("n-gram order must be at least 1".into()));
    }
    let cand = ngram_counts(candidate.tokens(), n);
    let total = cand.values().sum();
    if total == 0 {
        return Ok(NgramPrecision {
            matched: 0,
            total: 0,
        });
    }

    let mut max_ref: HashMap<&[String], u64> = HashMap::new();
    for reference in references {
        for (gram, count) in ngram_counts(reference.tokens(), n) {
            let slot = max_ref.entry(gram).or_insert(0);
            *slot = (*slot).max(count);
        }
    }

    let matched = cand
        .iter()
        .map(|(gram, &count)| count.min(max_ref.get(gram).copied().unwrap_or(0)))
        .sum();
    Ok(NgramPrecision { matched, total })
}

/// `1` if `c > r`, otherwise `exp(1 - r/c)`. Returns `0` when `c == 0`,
/// which callers treat as a zero score.
pub fn brevity_penalty<T: Scalar>(candidate_len: usize, reference_len: usize) -> T {
    if candidate_len == 0 {
        return T::zero();
    }
    if candidate_len > reference_len {
        return T::one();
    }
    let ratio = T::from_count(reference_len) / T::from_count(candidate_len);
    (T::one() - ratio).exp()
}

/// Reference length closest to the candidate length; ties go to the shorter.
pub fn effective_reference_length(
    candidate_len: usize,
    references: &[TokenSequence],
) -> Option<usize> {
    references
        .iter()
        .map(TokenSequence::len)
        .min_by_key(|&len| (len.abs_diff(candidate_len), len))
}

/// Sentence BLEU of `candidate` against `references`.
///
/// Orders with no candidate n-grams are left out and the remaining weights
/// renormalized. Any included order with zero matches gives a score of 0.
pub fn bleu<T: Scalar>(candidate: &str, references: &[&str], params: &BleuParams<T>) -> Result<T> {
    if references.is_empty() {
        return Err(Error::Precondition(
            "BLEU needs at least one reference".into(),
        ));
    }
    let cand = tokenize(candidate);
    let refs: Vec<TokenSequence> = references.iter().map(|r| tokenize(r)).collect();

    let c = cand.len();
    if c == 0 {
        return Ok(T::zero());
    }
    let r = effective_reference_length(c, &refs).expect("references are non-empty");

    let mut log_sum = T::zero();
    let mut weight_sum = T::zero();
    for (order, &weight) in (1..).zip(params.weights()) {
        let precision = modified_ngram_precision(&cand, &refs, order)?;
        if !precision.is_defined() {
            continue;
        }
        if precision.matched == 0 {
            return Ok(T::zero());
        }
        log_sum = log_sum + weight * precision.value::<T>().unwrap().ln();
        weight_sum = weight_sum + weight;
    }
    // c >= 1 guarantees order 1 is defined, so weight_sum > 0.
    let score = brevity_penalty::<T>(c, r) * (log_sum / weight_sum).exp();
    Ok(score.min(T::one()))
}
