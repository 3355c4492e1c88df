//! Providers answering from a precomputed JSON table, for replaying outputs
//! that were produced elsewhere (another machine, a notebook, a batch job).
//!
//! ```json
//! {
//!   "embedding_dim": 768,
//!   "captions": { "<image id>": "<caption>" },
//!   "generations": { "<caption text>": [ { "id": "...", "path": "..." } ] },
//!   "image_embeddings": { "<image id>": [0.1, ...] },
//!   "text_embeddings": { "<text>": [0.1, ...] }
//! }
//! ```
//!
//! Relative generation paths resolve against the table's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{
    caption_token_count, check_embedding, require_text, Captioner, ImageEmbedder, ImageGenerator,
    ProviderDescriptor, ProviderKind, Providers, TextEmbedder,
};
use crate::domain::{Caption, CaptionOrigin, ImageRef};
use crate::error::{Error, Result};
use crate::Embedding;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecomputedTable {
    #[serde(default)]
    pub embedding_dim: Option<usize>,
    #[serde(default)]
    pub captions: BTreeMap<String, String>,
    #[serde(default)]
    pub generations: BTreeMap<String, Vec<GeneratedFile>>,
    #[serde(default)]
    pub image_embeddings: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub text_embeddings: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct GeneratedFile {
    pub id: String,
    pub path: PathBuf,
}

/// A loaded table plus the identity used in cache keys.
#[derive(Debug)]
pub struct Precomputed {
    table: PrecomputedTable,
    base_dir: PathBuf,
    tag: String,
}

impl Precomputed {
    pub fn load(path: &Path) -> Result<Arc<Self>> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let table: PrecomputedTable = serde_json::from_slice(&bytes)?;
        let digest = hex::encode(Sha256::digest(&bytes));
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Arc::new(Self::from_table(table, base_dir, &digest[..16])))
    }

    pub fn from_table(table: PrecomputedTable, base_dir: PathBuf, tag: &str) -> Self {
        Precomputed {
            table,
            base_dir,
            tag: tag.to_string(),
        }
    }

    fn descriptor(&self, role: &str, kind: ProviderKind) -> Result<ProviderDescriptor> {
        let id = format!("file-{role}:{}", self.tag);
        match kind {
            ProviderKind::ImageEmbedder | ProviderKind::TextEmbedder => {
                let dim = self
                    .table
                    .embedding_dim
                    .ok_or_else(|| Error::Config("precomputed table lacks embedding_dim".into()))?;
                Ok(ProviderDescriptor::embedder(id, kind, dim, true))
            }
            _ => Ok(ProviderDescriptor::new(id, kind, true)),
        }
    }

    pub fn providers(self: &Arc<Self>) -> Result<Providers> {
        Ok(Providers {
            captioner: Some(Arc::new(FileCaptioner::new(self.clone())?)),
            generator: Some(Arc::new(FileGenerator::new(self.clone())?)),
            image_embedder: Some(Arc::new(FileImageEmbedder::new(self.clone())?)),
            text_embedder: Some(Arc::new(FileTextEmbedder::new(self.clone())?)),
        })
    }
}

pub struct FileCaptioner {
    data: Arc<Precomputed>,
    descriptor: ProviderDescriptor,
}

impl FileCaptioner {
    pub fn new(data: Arc<Precomputed>) -> Result<Self> {
        let descriptor = data.descriptor("captioner", ProviderKind::Captioner)?;
        Ok(FileCaptioner { data, descriptor })
    }
}

impl Captioner for FileCaptioner {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn caption(&self, image: &ImageRef, _prompt: &str, token_limit: usize) -> Result<Caption> {
        let text = self
            .data
            .table
            .captions
            .get(&image.id)
            .ok_or_else(|| Error::UnresolvableImage(image.id.clone()))?;
        let tokens = caption_token_count(text);
        if tokens > token_limit {
            return Err(Error::OverTokenLimit {
                tokens,
                limit: token_limit,
            });
        }
        Caption::new(text.trim(), CaptionOrigin::Model, image.id.clone())
    }
}

pub struct FileGenerator {
    data: Arc<Precomputed>,
    descriptor: ProviderDescriptor,
}

impl FileGenerator {
    pub fn new(data: Arc<Precomputed>) -> Result<Self> {
        let descriptor = data.descriptor("generator", ProviderKind::Generator)?;
        Ok(FileGenerator { data, descriptor })
    }
}

impl ImageGenerator for FileGenerator {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn generate_image(&self, caption: &Caption, sample_index: u32) -> Result<ImageRef> {
        let generated = self
            .data
            .table
            .generations
            .get(&caption.text)
            .and_then(|samples| samples.get(sample_index as usize))
            .ok_or_else(|| {
                Error::Precondition(format!(
                    "no precomputed generation #{sample_index} for caption {:?}",
                    caption.text
                ))
            })?;
        ImageRef::file(
            generated.id.clone(),
            self.data.base_dir.join(&generated.path),
        )
    }
}

pub struct FileImageEmbedder {
    data: Arc<Precomputed>,
    descriptor: ProviderDescriptor,
}

impl FileImageEmbedder {
    pub fn new(data: Arc<Precomputed>) -> Result<Self> {
        let descriptor = data.descriptor("image-embedder", ProviderKind::ImageEmbedder)?;
        Ok(FileImageEmbedder { data, descriptor })
    }
}

impl ImageEmbedder for FileImageEmbedder {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed_image(&self, image: &ImageRef) -> Result<Embedding> {
        let values = self
            .data
            .table
            .image_embeddings
            .get(&image.id)
            .ok_or_else(|| Error::UnresolvableImage(image.id.clone()))?;
        check_embedding(values.clone(), &self.descriptor)
    }
}

pub struct FileTextEmbedder {
    data: Arc<Precomputed>,
    descriptor: ProviderDescriptor,
}

impl FileTextEmbedder {
    pub fn new(data: Arc<Precomputed>) -> Result<Self> {
        let descriptor = data.descriptor("text-embedder", ProviderKind::TextEmbedder)?;
        Ok(FileTextEmbedder { data, descriptor })
    }
}

impl TextEmbedder for FileTextEmbedder {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed_text(&self, text: &str) -> Result<Embedding> {
        require_text(text)?;
        let values = self.data.table.text_embeddings.get(text).ok_or_else(|| {
            Error::Precondition(format!("no precomputed embedding for text {text:?}"))
        })?;
        check_embedding(values.clone(), &self.descriptor)
    }
}
