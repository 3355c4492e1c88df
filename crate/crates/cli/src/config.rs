//! The run-config file: a [`RunConfig`] plus one provider block per kind.
//!
//! ```json
//! {
//!   "seed": 42,
//!   "max_parallel": 8,
//!   "cache_dir": "cache",
//!   "sim_world": { "dim": 256, "caption_noise": 0.05, "generation_noise": 0.05 },
//!   "providers": {
//!     "captioner": { "type": "sim" },
//!     "generator": { "type": "http", "endpoint": "https://…", "model": "…", "credential_env": "GEN_KEY" },
//!     "image_embedder": { "type": "file", "path": "embeddings.json" }
//!   }
//! }
//! ```
//!
//! Relative paths inside the file resolve against its directory. The sim
//! world's seed defaults to the run seed.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cyclecap_core::providers::file::Precomputed;
use cyclecap_core::providers::http::{
    HttpCaptioner, HttpGenerator, HttpImageEmbedder, HttpSettings, HttpTextEmbedder, Transport,
    UreqTransport,
};
use cyclecap_core::providers::sim::SimWorld;
use cyclecap_core::providers::Providers;
use cyclecap_core::{Error, Result, RunConfig};
use serde::Deserialize;
use serde_json::Value;

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ProviderBlock {
    Sim,
    File { path: PathBuf },
    Http(HttpSettings),
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderBlocks {
    pub captioner: Option<ProviderBlock>,
    pub generator: Option<ProviderBlock>,
    pub image_embedder: Option<ProviderBlock>,
    pub text_embedder: Option<ProviderBlock>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimWorldBlock {
    pub seed: Option<u64>,
    pub dim: usize,
    #[serde(default)]
    pub caption_noise: f64,
    #[serde(default)]
    pub generation_noise: f64,
    #[serde(default = "default_bits")]
    pub quantization_bits: u32,
}

fn default_bits() -> u32 {
    16
}

/// Command-line values that win over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub cache_dir: Option<PathBuf>,
    pub max_parallel: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfigFile {
    pub run: RunConfig,
    pub sim_world: Option<SimWorldBlock>,
    pub providers: ProviderBlocks,
    pub base_dir: PathBuf,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let value: Value = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_value(value, base_dir)
    }

    pub fn from_value(value: Value, base_dir: PathBuf) -> Result<Self> {
        let Value::Object(mut map) = value else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let providers = match map.remove("providers") {
            Some(v) => {
                serde_json::from_value(v).map_err(|e| Error::Config(format!("providers: {e}")))?
            }
            None => ProviderBlocks::default(),
        };
        let sim_world = map
            .remove("sim_world")
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| Error::Config(format!("sim_world: {e}")))?;
        let mut run: RunConfig =
            serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(dir) = &run.cache_dir {
            run.cache_dir = Some(base_dir.join(dir));
        }
        let file = RunConfigFile {
            run,
            sim_world,
            providers,
            base_dir,
        };
        file.run.validate()?;
        Ok(file)
    }

    pub fn apply(&mut self, overrides: &Overrides) -> Result<()> {
        if let Some(seed) = overrides.seed {
            self.run.seed = seed;
        }
        if let Some(dir) = &overrides.cache_dir {
            self.run.cache_dir = Some(dir.clone());
        }
        if let Some(n) = overrides.max_parallel {
            self.run.max_parallel = n;
        }
        self.run.validate()
    }

    pub fn world(&self) -> Result<SimWorld> {
        let block = self
            .sim_world
            .as_ref()
            .ok_or_else(|| Error::Config("a sim provider needs a sim_world block".into()))?;
        SimWorld::new(
            block.seed.unwrap_or(self.run.seed),
            block.dim,
            block.caption_noise,
            block.generation_noise,
            block.quantization_bits,
        )
    }

    /// Builds every configured provider. HTTP credentials are resolved here,
    /// so a missing variable fails before any request is made.
    pub fn build_providers(&self) -> Result<Providers> {
        self.build_providers_with(Arc::new(UreqTransport::default()))
    }

    pub fn build_providers_with(&self, transport: Arc<dyn Transport>) -> Result<Providers> {
        let world = match self.uses_sim() {
            true => Some(self.world()?),
            false => None,
        };
        let mut tables: HashMap<PathBuf, Arc<Precomputed>> = HashMap::new();
        let mut table = |path: &Path| -> Result<Arc<Precomputed>> {
            let full = self.base_dir.join(path);
            if let Some(t) = tables.get(&full) {
                return Ok(t.clone());
            }
            let t = Precomputed::load(&full)?;
            tables.insert(full, t.clone());
            Ok(t)
        };
        let sim = || {
            world
                .clone()
                .expect("sim world built when a sim block exists")
        };
        let blocks = &self.providers;

        let mut providers = Providers::default();
        providers.captioner = match &blocks.captioner {
            None => None,
            Some(ProviderBlock::Sim) => Some(Arc::new(sim().captioner())),
            Some(ProviderBlock::File { path }) => Some(Arc::new(
                cyclecap_core::providers::file::FileCaptioner::new(table(path)?)?,
            )),
            Some(ProviderBlock::Http(s)) => {
                Some(Arc::new(HttpCaptioner::new(s.clone(), transport.clone())?))
            }
        };
        providers.generator = match &blocks.generator {
            None => None,
            Some(ProviderBlock::Sim) => Some(Arc::new(sim().generator())),
            Some(ProviderBlock::File { path }) => Some(Arc::new(
                cyclecap_core::providers::file::FileGenerator::new(table(path)?)?,
            )),
            Some(ProviderBlock::Http(s)) => {
                Some(Arc::new(HttpGenerator::new(s.clone(), transport.clone())?))
            }
        };
        providers.image_embedder = match &blocks.image_embedder {
            None => None,
            Some(ProviderBlock::Sim) => Some(Arc::new(sim().image_embedder())),
            Some(ProviderBlock::File { path }) => Some(Arc::new(
                cyclecap_core::providers::file::FileImageEmbedder::new(table(path)?)?,
            )),
            Some(ProviderBlock::Http(s)) => Some(Arc::new(HttpImageEmbedder::new(
                s.clone(),
                transport.clone(),
            )?)),
        };
        providers.text_embedder = match &blocks.text_embedder {
            None => None,
            Some(ProviderBlock::Sim) => Some(Arc::new(sim().text_embedder())),
            Some(ProviderBlock::File { path }) => Some(Arc::new(
                cyclecap_core::providers::file::FileTextEmbedder::new(table(path)?)?,
            )),
            Some(ProviderBlock::Http(s)) => {
                Some(Arc::new(HttpTextEmbedder::new(s.clone(), transport)?))
            }
        };
        Ok(providers)
    }

    fn uses_sim(&self) -> bool {
        let b = &self.providers;
        [
            &b.captioner,
            &b.generator,
            &b.image_embedder,
            &b.text_embedder,
        ]
        .iter()
        .any(|p| matches!(p, Some(ProviderBlock::Sim)))
    }
}
