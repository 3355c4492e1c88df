use serde::{Deserialize, Serialize};

use super::cosine::cosine_similarity;
use crate::domain::EmbeddingVector;
use crate::error::{Error, Result};
use crate::num::Scalar;

/// Cosine between a candidate caption and each reference, plus their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextSimilarity<T> {
    pub per_ref: Vec<T>,
    pub mean: T,
}

/// Embeds the candidate once and every reference once, in order.
pub fn text_to_text_similarity<T, F>(
    candidate: &str,
    references: &[&str],
    mut embed: F,
) -> Result<TextSimilarity<T>>
where
    T: Scalar,
    F: FnMut(&str) -> Result<EmbeddingVector<T>>,
{
    if references.is_empty() {
        return Err(Error::Precondition(
            "text similarity needs at least one reference".into(),
        ));
    }
    let cand = embed(candidate)?;
    let per_ref = references
        .iter()
        .map(|r| cosine_similarity(&cand, &embed(r)?))
        .collect::<Result<Vec<T>>>()?;
    let mean = per_ref.iter().copied().sum::<T>() / T::from_count(per_ref.len());
    Ok(TextSimilarity { per_ref, mean })
}
