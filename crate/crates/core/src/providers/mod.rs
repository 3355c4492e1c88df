//! The four external capabilities the pipeline depends on, and their
//! implementations: a deterministic simulation world, file-backed
//! precomputed outputs, and generic JSON-over-HTTP clients.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{Caption, ImageRef};
use crate::error::{Error, Result};
use crate::Embedding;

pub mod file;
pub mod http;
pub mod sim;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Captioner,
    Generator,
    ImageEmbedder,
    TextEmbedder,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderDescriptor {
    pub id: String,
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    pub deterministic: bool,
}

impl ProviderDescriptor {
    pub fn new(id: impl Into<String>, kind: ProviderKind, deterministic: bool) -> Self {
        ProviderDescriptor {
            id: id.into(),
            kind,
            embedding_dim: None,
            deterministic,
        }
    }

    pub fn embedder(
        id: impl Into<String>,
        kind: ProviderKind,
        dim: usize,
        deterministic: bool,
    ) -> Self {
        ProviderDescriptor {
            embedding_dim: Some(dim),
            ..Self::new(id, kind, deterministic)
        }
    }

    /// Embedders declare a positive dimension; other kinds declare none.
    pub fn validate(&self) -> Result<()> {
        let is_embedder = matches!(
            self.kind,
            ProviderKind::ImageEmbedder | ProviderKind::TextEmbedder
        );
        match (is_embedder, self.embedding_dim) {
            (true, Some(d)) if d > 0 => Ok(()),
            (false, None) => Ok(()),
            _ => Err(Error::Config(format!(
                "provider {}: embedding_dim must be set exactly for embedders",
                self.id
            ))),
        }
    }
}

pub trait Captioner: Send + Sync {
    fn descriptor(&self) -> &ProviderDescriptor;

    /// Returns a caption with origin `model` for `image`.
    fn caption(&self, image: &ImageRef, prompt: &str, token_limit: usize) -> Result<Caption>;
}

pub trait ImageGenerator: Send + Sync {
    fn descriptor(&self) -> &ProviderDescriptor;

    /// `sample_index` selects among independent generations for one caption.
    fn generate_image(&self, caption: &Caption, sample_index: u32) -> Result<ImageRef>;
}

pub trait ImageEmbedder: Send + Sync {
    fn descriptor(&self) -> &ProviderDescriptor;

    fn embed_image(&self, image: &ImageRef) -> Result<Embedding>;
}

pub trait TextEmbedder: Send + Sync {
    fn descriptor(&self) -> &ProviderDescriptor;

    fn embed_text(&self, text: &str) -> Result<Embedding>;
}

/// The set of providers a run uses; any may be absent.
#[derive(Clone, Default)]
pub struct Providers {
    pub captioner: Option<Arc<dyn Captioner>>,
    pub generator: Option<Arc<dyn ImageGenerator>>,
    pub image_embedder: Option<Arc<dyn ImageEmbedder>>,
    pub text_embedder: Option<Arc<dyn TextEmbedder>>,
}

impl Providers {
    pub fn descriptors(&self) -> Vec<ProviderDescriptor> {
        let mut out = Vec::new();
        if let Some(p) = &self.captioner {
            out.push(p.descriptor().clone());
        }
        if let Some(p) = &self.generator {
            out.push(p.descriptor().clone());
        }
        if let Some(p) = &self.image_embedder {
            out.push(p.descriptor().clone());
        }
        if let Some(p) = &self.text_embedder {
            out.push(p.descriptor().clone());
        }
        out
    }

    /// Wraps every provider so that each real invocation bumps `counter`.
    pub fn counted(self, counter: &CallCounter) -> Providers {
        Providers {
            captioner: self.captioner.map(|inner| {
                Arc::new(Counted {
                    inner,
                    counter: counter.clone(),
                }) as Arc<dyn Captioner>
            }),
            generator: self.generator.map(|inner| {
                Arc::new(Counted {
                    inner,
                    counter: counter.clone(),
                }) as Arc<dyn ImageGenerator>
            }),
            image_embedder: self.image_embedder.map(|inner| {
                Arc::new(Counted {
                    inner,
                    counter: counter.clone(),
                }) as Arc<dyn ImageEmbedder>
            }),
            text_embedder: self.text_embedder.map(|inner| {
                Arc::new(Counted {
                    inner,
                    counter: counter.clone(),
                }) as Arc<dyn TextEmbedder>
            }),
        }
    }
}

/// Shared invocation counter.
#[derive(Clone, Debug, Default)]
pub struct CallCounter(Arc<AtomicU64>);

impl CallCounter {
    pub fn get(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }

    fn bump(&self) {
        self.0.fetch_add(1, Ordering::SeqCst);
    }
}

struct Counted<P: ?Sized> {
    inner: Arc<P>,
    counter: CallCounter,
}

impl Captioner for Counted<dyn Captioner> {
    fn descriptor(&self) -> &ProviderDescriptor {
        self.inner.descriptor()
    }

    fn caption(&self, image: &ImageRef, prompt: &str, token_limit: usize) -> Result<Caption> {
        self.counter.bump();
        self.inner.caption(image, prompt, token_limit)
    }
}

impl ImageGenerator for Counted<dyn ImageGenerator> {
    fn descriptor(&self) -> &ProviderDescriptor {
        self.inner.descriptor()
    }

    fn generate_image(&self, caption: &Caption, sample_index: u32) -> Result<ImageRef> {
        self.counter.bump();
        self.inner.generate_image(caption, sample_index)
    }
}

impl ImageEmbedder for Counted<dyn ImageEmbedder> {
    fn descriptor(&self) -> &ProviderDescriptor {
        self.inner.descriptor()
    }

    fn embed_image(&self, image: &ImageRef) -> Result<Embedding> {
        self.counter.bump();
        self.inner.embed_image(image)
    }
}

impl TextEmbedder for Counted<dyn TextEmbedder> {
    fn descriptor(&self) -> &ProviderDescriptor {
        self.inner.descriptor()
    }

    fn embed_text(&self, text: &str) -> Result<Embedding> {
        self.counter.bump();
        self.inner.embed_text(text)
    }
}

pub(crate) fn require_text(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        Err(Error::Precondition("text to embed is empty".into()))
    } else {
        Ok(())
    }
}

/// Checks a provider-returned vector against the declared dimension.
pub(crate) fn check_embedding(
    values: Vec<f64>,
    descriptor: &ProviderDescriptor,
) -> Result<Embedding> {
    let dim = descriptor.embedding_dim.unwrap_or(values.len());
    if values.len() != dim {
        return Err(Error::Protocol(format!(
            "{} returned {} values, declared dimension is {dim}",
            descriptor.id,
            values.len()
        )));
    }
    Embedding::new(values)
}

/// Whitespace token count, the unit of the caption length limit.
pub fn caption_token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_dims() {
        assert!(
            ProviderDescriptor::embedder("e", ProviderKind::ImageEmbedder, 8, true)
                .validate()
                .is_ok()
        );
        assert!(
            ProviderDescriptor::new("e", ProviderKind::ImageEmbedder, true)
                .validate()
                .is_err()
        );
        assert!(
            ProviderDescriptor::embedder("c", ProviderKind::Captioner, 8, true)
                .validate()
                .is_err()
        );
        assert!(ProviderDescriptor::new("c", ProviderKind::Generator, false)
            .validate()
            .is_ok());
    }

    #[test]
    fn dimension_mismatch_is_protocol_error() {
        let d = ProviderDescriptor::embedder("e", ProviderKind::ImageEmbedder, 768, false);
        assert!(matches!(
            check_embedding(vec![0.5; 512], &d),
            Err(Error::Protocol(_))
        ));
        assert_eq!(check_embedding(vec![0.5; 768], &d).unwrap().dim(), 768);
    }
}
