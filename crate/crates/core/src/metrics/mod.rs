//! Native metrics: cosine similarity, the BLEU baseline, text-to-text
//! similarity and summary statistics.

mod bleu;
mod cosine;
mod stats;
mod text;
mod tokenize;

pub use bleu::{
    bleu, brevity_penalty, effective_reference_length, modified_ngram_precision, BleuParams,
    NgramPrecision,
};
pub use cosine::{cosine_similarity, cosine_slices};
pub use stats::{aggregate, Aggregate};
pub use text::{text_to_text_similarity, TextSimilarity};
pub use tokenize::{tokenize, TokenSequence};
