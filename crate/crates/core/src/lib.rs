//! Reference-free caption evaluation by cycle consistency.
//!
//! A caption is scored by regenerating an image from it with a text-to-image
//! model and measuring how close that image lands to the original in an
//! image embedding space. Providers (captioner, generator, embedders) sit
//! behind traits; [`providers::sim`] offers a fully deterministic synthetic
//! world for testing, [`providers::file`] replays precomputed outputs and
//! [`providers::http`] talks to remote JSON endpoints.
//!
//! ```
//! use cyclecap_core::providers::sim::SimWorld;
//! use cyclecap_core::{evaluate_model, RunConfig};
//!
//! let world = SimWorld::noiseless(7, 32).unwrap();
//! let dataset = world.synthetic_dataset(4, 5);
//! let run = evaluate_model(&dataset, world.providers(), &RunConfig::default()).unwrap();
//! assert!(run.summary.mean.unwrap() > 0.999);
//! ```

pub mod domain;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod num;
pub mod pipeline;
pub mod providers;
pub mod store;
pub mod stream;

pub use domain::{
    Caption, CaptionOrigin, Condition, DatasetEntry, EmbeddingVector, EvalRecord, GapReport,
    GapRow, ImageRef, ImageSource, ReferenceMode, RunConfig,
};
pub use error::{Error, Result};
pub use num::Scalar;
pub use pipeline::{
    compute_gap, evaluate_model, human_validation_run, select_incorrect_caption, Pipeline,
    RunResult,
};

/// Embedding used throughout the pipeline.
pub type Embedding = EmbeddingVector<f64>;
/// Single precision embedding, for storage-bound callers.
pub type Embedding32 = EmbeddingVector<f32>;
pub type Summary = metrics::Aggregate<f64>;
pub type Summary32 = metrics::Aggregate<f32>;
pub type Bleu = metrics::BleuParams<f64>;
pub type Bleu32 = metrics::BleuParams<f32>;
pub type TextScores = metrics::TextSimilarity<f64>;
