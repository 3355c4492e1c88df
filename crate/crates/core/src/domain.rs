//! Value types shared across the harness.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Number of human references each image carries in the benchmark datasets.
pub const EXPECTED_REFERENCES: usize = 5;

/// Default captioning prompt.
pub const DEFAULT_CAPTION_PROMPT: &str = "A short image caption:";

/// Default caption length limit, in tokens, excluding special symbols.
pub const DEFAULT_CAPTION_TOKEN_LIMIT: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub source: ImageSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
}

/// Where the pixels (or the latent, for simulated images) live.
///
/// The harness never decodes image payloads; embedding providers do.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageSource {
    File {
        path: PathBuf,
    },
    Bytes {
        media_type: String,
        #[serde(with = "base64_bytes")]
        data: Vec<u8>,
    },
    /// An image of the simulated world. `latent` is absent for world images
    /// (recomputed from `world_seed` and `index`) and present for generated ones.
    Synthetic {
        world_seed: u64,
        index: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        latent: Option<Vec<f64>>,
    },
}

impl ImageRef {
    pub fn new(id: impl Into<String>, source: ImageSource) -> Result<Self> {
        let image = ImageRef {
            id: id.into(),
            source,
            width: None,
            height: None,
        };
        image.validate()?;
        Ok(image)
    }

    pub fn file(id: impl Into<String>, path: impl Into<PathBuf>) -> Result<Self> {
        Self::new(id, ImageSource::File { path: path.into() })
    }

    pub fn synthetic(id: impl Into<String>, world_seed: u64, index: u64) -> Result<Self> {
        Self::new(
            id,
            ImageSource::Synthetic {
                world_seed,
                index,
                latent: None,
            },
        )
    }

    pub fn with_size(mut self, width: u32, height: u32) -> Result<Self> {
        self.width = Some(width);
        self.height = Some(height);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Invalid("image id is empty".into()));
        }
        if self.width == Some(0) || self.height == Some(0) {
            return Err(Error::Invalid(format!(
                "image {}: width and height must be positive",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionOrigin {
    Human,
    Model,
    Replacement,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub text: String,
    pub origin: CaptionOrigin,
    /// Image the caption was written for (or borrowed from, for replacements).
    pub image_id: String,
}

impl Caption {
    pub fn new(
        text: impl Into<String>,
        origin: CaptionOrigin,
        image_id: impl Into<String>,
    ) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Invalid("caption text is empty".into()));
        }
        Ok(Caption {
            text,
            origin,
            image_id: image_id.into(),
        })
    }

    pub fn human(text: impl Into<String>, image_id: impl Into<String>) -> Result<Self> {
        Self::new(text, CaptionOrigin::Human, image_id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub image: ImageRef,
    pub references: Vec<Caption>,
}

impl DatasetEntry {
    /// Builds an entry from reference texts, tagging each as a human caption of `image`.
    pub fn from_texts<S: AsRef<str>>(image: ImageRef, texts: &[S]) -> Result<Self> {
        let references = texts
            .iter()
            .map(|t| Caption::human(t.as_ref().trim(), image.id.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(DatasetEntry { image, references })
    }

    pub fn id(&self) -> &str {
        &self.image.id
    }

    pub fn reference_texts(&self) -> Vec<&str> {
        self.references.iter().map(|c| c.text.as_str()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    pub image_id: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{level}: {}: {}", self.image_id, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Issue> {
        self.issues
            .iter()
            .filter(|i| i.severity == Severity::Warning)
    }

    pub fn extend(&mut self, other: ValidationReport) {
        self.issues.extend(other.issues);
    }
}

/// Checks every [`DatasetEntry`] invariant. A reference count other than
/// [`EXPECTED_REFERENCES`] is only a warning; the cosine metric needs no
/// references at all.
pub fn validate_entry(entry: &DatasetEntry) -> ValidationReport {
    let id = entry.image.id.clone();
    let mut issues = Vec::new();
    let mut push = |severity, message: String| {
        issues.push(Issue {
            severity,
            image_id: id.clone(),
            message,
        })
    };

    if let Err(e) = entry.image.validate() {
        push(Severity::Error, e.to_string());
    }

    let count = entry.references.len();
    if count == 0 {
        push(Severity::Error, "no references".into());
    } else if count != EXPECTED_REFERENCES {
        push(
            Severity::Warning,
            format!("reference count {count} ≠ {EXPECTED_REFERENCES}"),
        );
    }

    for (i, reference) in entry.references.iter().enumerate() {
        if reference.origin != CaptionOrigin::Human {
            push(
                Severity::Error,
                format!(
                    "reference {i} has origin {:?}, expected human",
                    reference.origin
                ),
            );
        }
        if reference.image_id != entry.image.id {
            push(
                Severity::Error,
                format!("reference {i} belongs to image {:?}", reference.image_id),
            );
        }
        if reference.text.trim().is_empty() {
            push(Severity::Error, format!("reference {i} is empty"));
        }
    }

    ValidationReport { issues }
}

/// Fixed-dimension real feature vector for an image or a text.
///
/// Components are guaranteed finite. Vectors are stored as the provider
/// returned them; normalization happens only inside cosine similarity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "EmbeddingRepr<T>",
    into = "EmbeddingRepr<T>",
    bound(
        serialize = "T: Scalar + Serialize",
        deserialize = "T: Scalar + Deserialize<'de>"
    )
)]
pub struct EmbeddingVector<T: Scalar> {
    values: Vec<T>,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("embedding has zero dimension".into()));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(EmbeddingVector { values })
    }

    /// Like [`EmbeddingVector::new`], additionally requiring `expected_dim` components.
    pub fn with_dim(values: Vec<T>, expected_dim: usize) -> Result<Self> {
        if values.len() != expected_dim {
            return Err(Error::DimensionMismatch {
                left: values.len(),
                right: expected_dim,
            });
        }
        Self::new(values)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }
}

#[derive(Clone, Serialize, Deserialize)]
struct EmbeddingRepr<T> {
    dim: usize,
    values: Vec<T>,
}

impl<T: Scalar> TryFrom<EmbeddingRepr<T>> for EmbeddingVector<T> {
    type Error = Error;

    fn try_from(repr: EmbeddingRepr<T>) -> Result<Self> {
        Self::with_dim(repr.values, repr.dim)
    }
}

impl<T: Scalar> From<EmbeddingVector<T>> for EmbeddingRepr<T> {
    fn from(v: EmbeddingVector<T>) -> Self {
        EmbeddingRepr {
            dim: v.values.len(),
            values: v.values,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Model,
    Correct,
    Incorrect,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Model => "model",
            Condition::Correct => "correct",
            Condition::Incorrect => "incorrect",
        })
    }
}

/// Per-stage cache outcome of one record. `caption` is `None` when the
/// captioning stage did not run (validation conditions).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCacheHits {
    pub caption: Option<bool>,
    pub generate: bool,
    pub embed_original: bool,
    pub embed_generated: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageProviders {
    pub captioner: Option<String>,
    pub generator: String,
    pub image_embedder: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: String,
    pub sample_index: u32,
    /// Which human reference was used, for the correct condition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_index: Option<usize>,
    pub caption: Caption,
    pub condition: Condition,
    pub cosine: f64,
    pub generated_image_id: String,
    pub cache_hits: StageCacheHits,
    pub provider_ids: StageProviders,
}

impl EvalRecord {
    /// Checks the cosine range and the condition/origin consistency rule.
    pub fn check(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.cosine) {
            return Err(Error::Invalid(format!(
                "record {}: cosine {} outside [-1, 1]",
                self.image_id, self.cosine
            )));
        }
        let consistent = match self.condition {
            Condition::Model => self.caption.origin == CaptionOrigin::Model,
            Condition::Correct => {
                self.caption.origin == CaptionOrigin::Human
                    && self.caption.image_id == self.image_id
            }
            Condition::Incorrect => {
                self.caption.origin == CaptionOrigin::Replacement
                    && self.caption.image_id != self.image_id
            }
        };
        if consistent {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "record {}: caption origin {:?} from {:?} inconsistent with condition {}",
                self.image_id, self.caption.origin, self.caption.image_id, self.condition
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub image_id: String,
    pub cosine_correct: f64,
    pub cosine_incorrect: f64,
}

/// Correct- versus incorrect-caption contrast over the same images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub mean_correct: f64,
    pub mean_incorrect: f64,
    pub gap: f64,
    pub std_correct: f64,
    pub std_incorrect: f64,
    pub n: usize,
    pub per_image: Vec<GapRow>,
}

impl GapReport {
    /// Recomputes means and gap from `per_image` and compares within `tol`.
    pub fn check_identities(&self, tol: f64) -> Result<()> {
        if self.n != self.per_image.len() {
            return Err(Error::Invalid(format!(
                "gap report n={} but {} rows",
                self.n,
                self.per_image.len()
            )));
        }
        if self.gap != self.mean_correct - self.mean_incorrect {
            return Err(Error::Invalid(
                "gap is not mean_correct - mean_incorrect".into(),
            ));
        }
        if self.n == 0 {
            return Ok(());
        }
        let n = self.n as f64;
        let mc = self.per_image.iter().map(|r| r.cosine_correct).sum::<f64>() / n;
        let mi = self
            .per_image
            .iter()
            .map(|r| r.cosine_incorrect)
            .sum::<f64>()
            / n;
        if (mc - self.mean_correct).abs() > tol || (mi - self.mean_incorrect).abs() > tol {
            return Err(Error::Invalid(format!(
                "gap report means ({}, {}) differ from recomputation ({mc}, {mi})",
                self.mean_correct, self.mean_incorrect
            )));
        }
        Ok(())
    }
}

/// How the correct condition picks its human caption.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// Use the reference at `RunConfig::reference_index`.
    #[default]
    Single,
    /// Run every reference and average per image.
    AllReferences,
}

/// Everything that determines a run, given fixed providers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub captioner_id: Option<String>,
    pub generator_id: Option<String>,
    pub embedder_id: Option<String>,
    pub text_embedder_id: Option<String>,
    pub max_parallel: usize,
    pub cache_dir: Option<PathBuf>,
    pub caption_prompt: String,
    pub caption_token_limit: usize,
    pub samples_per_caption: u32,
    pub reference_index: usize,
    pub reference_mode: ReferenceMode,
    /// Largest tolerated fraction of failed records before the run fails.
    pub failure_ceiling: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            captioner_id: None,
            generator_id: None,
            embedder_id: None,
            text_embedder_id: None,
            max_parallel: 4,
            cache_dir: None,
            caption_prompt: DEFAULT_CAPTION_PROMPT.to_string(),
            caption_token_limit: DEFAULT_CAPTION_TOKEN_LIMIT,
            samples_per_caption: 1,
            reference_index: 0,
            reference_mode: ReferenceMode::Single,
            failure_ceiling: 0.05,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_parallel == 0 {
            return Err(Error::Config("max_parallel must be at least 1".into()));
        }
        if self.samples_per_caption == 0 {
            return Err(Error::Config(
                "samples_per_caption must be at least 1".into(),
            ));
        }
        if self.caption_token_limit == 0 {
            return Err(Error::Config(
                "caption_token_limit must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.failure_ceiling) {
            return Err(Error::Config("failure_ceiling must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}
