//! The evaluation loop: caption an image, generate an image from the
//! caption, embed both images and score their cosine similarity. The same
//! generate → embed → score path serves the validation protocol, where the
//! caption is an image's own human reference (correct condition) or one
//! borrowed from another image (incorrect condition).

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::{debug, info, warn};

use crate::domain::{
    Caption, CaptionOrigin, Condition, DatasetEntry, EvalRecord, GapReport, GapRow, ImageRef,
    ReferenceMode, RunConfig, StageCacheHits, StageProviders,
};
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate, bleu, cosine_similarity, text_to_text_similarity, Aggregate, BleuParams,
    TextSimilarity,
};
use crate::providers::{ProviderDescriptor, Providers};
use crate::store::{cache_key, canonical_bytes, Cache, Sidecar};
use crate::stream::StreamKey;
use crate::Embedding;

/// Conventions a run was computed under, recorded alongside its results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub reference_mode: ReferenceMode,
    pub reference_index: usize,
    pub bleu_max_order: usize,
    pub bleu_effective_length: String,
    pub bleu_smoothing: String,
    pub tokenizer: String,
}

impl RunMetadata {
    fn new(config: &RunConfig) -> Self {
        RunMetadata {
            reference_mode: config.reference_mode,
            reference_index: config.reference_index,
            bleu_max_order: BleuParams::<f64>::default().max_order(),
            bleu_effective_length: "closest reference length, ties to shorter".into(),
            bleu_smoothing: "none".into(),
            tokenizer: "lowercase, whitespace split, strip edge punctuation".into(),
        }
    }
}

/// Text baselines for one image of a model run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub image_id: String,
    pub bleu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text2text: Option<TextSimilarity<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub image_id: String,
    pub sample_index: u32,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    /// Provider invocations actually made (cache misses).
    pub provider_calls: u64,
    pub cache_lookups: u64,
    pub cache_hits: u64,
}

impl RunStats {
    /// Hits over lookups; `None` when nothing was looked up.
    pub fn cache_hit_rate(&self) -> Option<f64> {
        (self.cache_lookups > 0).then(|| self.cache_hits as f64 / self.cache_lookups as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub condition: Condition,
    pub config: RunConfig,
    pub records: Vec<EvalRecord>,
    pub summary: Aggregate<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baselines: Option<Vec<BaselineRow>>,
    #[serde(default)]
    pub failures: Vec<RecordFailure>,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub providers: Vec<ProviderDescriptor>,
    pub metadata: RunMetadata,
    pub stats: RunStats,
    pub started_at: String,
    pub finished_at: String,
}

impl RunResult {
    /// Copy with timestamps, cache provenance and execution-only settings
    /// (parallelism, cache location) cleared: what must agree between two
    /// executions of the same run.
    pub fn normalized(&self) -> RunResult {
        let mut out = self.clone();
        out.started_at.clear();
        out.finished_at.clear();
        out.stats = RunStats::default();
        out.config.max_parallel = RunConfig::default().max_parallel;
        out.config.cache_dir = None;
        for record in &mut out.records {
            record.cache_hits = StageCacheHits::default();
        }
        out
    }

    /// Mean cosine per image over its samples (and references), by image id.
    pub fn per_image_cosines(&self) -> BTreeMap<String, f64> {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for r in &self.records {
            let slot = sums.entry(r.image_id.clone()).or_default();
            slot.0 += r.cosine;
            slot.1 += 1;
        }
        sums.into_iter()
            .map(|(id, (s, n))| (id, s / n as f64))
            .collect()
    }

    pub fn mean_cosine(&self) -> Option<f64> {
        self.summary.mean
    }
}

#[derive(Default)]
struct Counters {
    provider_calls: AtomicU64,
    lookups: AtomicU64,
    hits: AtomicU64,
}

/// Providers plus the optional cache every provider call goes through.
pub struct Pipeline {
    providers: Providers,
    cache: Option<Cache>,
    counters: Counters,
}

struct Scored {
    record: EvalRecord,
}

/// What to do for one dataset entry.
struct Job<'a> {
    entry: &'a DatasetEntry,
    captions: Vec<(Option<usize>, Caption)>,
}

impl Pipeline {
    pub fn new(providers: Providers, cache: Option<Cache>) -> Self {
        Pipeline {
            providers,
            cache,
            counters: Counters::default(),
        }
    }

    /// Opens the cache named in `config`, if any.
    pub fn from_config(providers: Providers, config: &RunConfig) -> Result<Self> {
        let cache = config.cache_dir.as_ref().map(Cache::open).transpose()?;
        Ok(Self::new(providers, cache))
    }

    pub fn providers(&self) -> &Providers {
        &self.providers
    }

    fn stats(&self) -> RunStats {
        RunStats {
            provider_calls: self.counters.provider_calls.load(Ordering::SeqCst),
            cache_lookups: self.counters.lookups.load(Ordering::SeqCst),
            cache_hits: self.counters.hits.load(Ordering::SeqCst),
        }
    }

    fn reset_counters(&self) {
        self.counters.provider_calls.store(0, Ordering::SeqCst);
        self.counters.lookups.store(0, Ordering::SeqCst);
        self.counters.hits.store(0, Ordering::SeqCst);
    }

    /// Returns the value and whether it came from the cache.
    fn cached<T, F>(
        &self,
        provider_id: &str,
        op: &str,
        inputs: serde_json::Value,
        compute: F,
    ) -> Result<(T, bool)>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T>,
    {
        let Some(cache) = &self.cache else {
            self.counters.provider_calls.fetch_add(1, Ordering::SeqCst);
            return compute().map(|v| (v, false));
        };
        let key = cache_key(provider_id, op, &canonical_bytes(&inputs)?);
        self.counters.lookups.fetch_add(1, Ordering::SeqCst);
        if let Some(bytes) = cache.get(&key)? {
            self.counters.hits.fetch_add(1, Ordering::SeqCst);
            debug!(provider_id, op, %key, "cache hit");
            return Ok((serde_json::from_slice(&bytes)?, true));
        }
        self.counters.provider_calls.fetch_add(1, Ordering::SeqCst);
        let value = compute()?;
        let sidecar = Sidecar {
            provider_id: provider_id.to_string(),
            op: op.to_string(),
            created_at: chrono::Utc::now().to_rfc3339(),
            media_type: "application/json".into(),
        };
        cache.put(&key, &serde_json::to_vec(&value)?, &sidecar)?;
        Ok((value, false))
    }

    fn caption(&self, image: &ImageRef, config: &RunConfig) -> Result<(Caption, bool)> {
        let p = self
            .providers
            .captioner
            .as_ref()
            .ok_or(Error::MissingProvider("captioner"))?;
        let inputs = json!({
            "image": image,
            "prompt": config.caption_prompt,
            "token_limit": config.caption_token_limit,
        });
        let (caption, hit): (Caption, bool) =
            self.cached(&p.descriptor().id, "caption", inputs, || {
                p.caption(image, &config.caption_prompt, config.caption_token_limit)
            })?;
        if caption.origin != CaptionOrigin::Model || caption.image_id != image.id {
            return Err(Error::Protocol(format!(
                "captioner returned a caption with origin {:?} for image {:?}",
                caption.origin, caption.image_id
            )));
        }
        Ok((caption, hit))
    }

    fn generate(&self, caption: &Caption, sample_index: u32) -> Result<(ImageRef, bool)> {
        let p = self
            .providers
            .generator
            .as_ref()
            .ok_or(Error::MissingProvider("generator"))?;
        let inputs = json!({ "caption": caption.text, "sample_index": sample_index });
        self.cached(&p.descriptor().id, "generate_image", inputs, || {
            p.generate_image(caption, sample_index)
        })
    }

    fn embed_image(&self, image: &ImageRef) -> Result<(Embedding, bool)> {
        let p = self
            .providers
            .image_embedder
            .as_ref()
            .ok_or(Error::MissingProvider("image embedder"))?;
        let (v, hit): (Embedding, bool) = self.cached(
            &p.descriptor().id,
            "embed_image",
            json!({ "image": image }),
            || p.embed_image(image),
        )?;
        if let Some(dim) = p.descriptor().embedding_dim {
            if v.dim() != dim {
                return Err(Error::Protocol(format!(
                    "image embedding has dim {}, declared {dim}",
                    v.dim()
                )));
            }
        }
        Ok((v, hit))
    }

    fn embed_text(&self, text: &str) -> Result<Embedding> {
        let p = self
            .providers
            .text_embedder
            .as_ref()
            .ok_or(Error::MissingProvider("text embedder"))?;
        self.cached(
            &p.descriptor().id,
            "embed_text",
            json!({ "text": text }),
            || p.embed_text(text),
        )
        .map(|(v, _)| v)
    }

    fn stage_providers(&self, with_captioner: bool) -> StageProviders {
        StageProviders {
            captioner: with_captioner
                .then(|| {
                    self.providers
                        .captioner
                        .as_ref()
                        .map(|p| p.descriptor().id.clone())
                })
                .flatten(),
            generator: self
                .providers
                .generator
                .as_ref()
                .map(|p| p.descriptor().id.clone())
                .unwrap_or_default(),
            image_embedder: self
                .providers
                .image_embedder
                .as_ref()
                .map(|p| p.descriptor().id.clone())
                .unwrap_or_default(),
        }
    }

    /// Generate, embed and score every `(caption, sample)` of one entry.
    fn score_entry(
        &self,
        job: &Job<'_>,
        condition: Condition,
        caption_hit: Option<bool>,
        config: &RunConfig,
    ) -> Vec<std::result::Result<Scored, RecordFailure>> {
        let image = &job.entry.image;
        let fail_all = |message: String| {
            job.captions
                .iter()
                .flat_map(|_| 0..config.samples_per_caption)
                .map(|s| {
                    Err(RecordFailure {
                        image_id: image.id.clone(),
                        sample_index: s,
                        message: message.clone(),
                    })
                })
                .collect()
        };
        let (original, original_hit) = match self.embed_image(image) {
            Ok(v) => v,
            Err(e) => return fail_all(format!("embed original: {e}")),
        };
        let providers = self.stage_providers(condition == Condition::Model);

        let mut out = Vec::new();
        for (reference_index, caption) in &job.captions {
            for s in 0..config.samples_per_caption {
                let scored = (|| {
                    let (generated, gen_hit) = self
                        .generate(caption, s)
                        .map_err(|e| format!("generate: {e}"))?;
                    let (embedding, emb_hit) = self
                        .embed_image(&generated)
                        .map_err(|e| format!("embed generated: {e}"))?;
                    let cosine = cosine_similarity(&original, &embedding)
                        .map_err(|e| format!("cosine: {e}"))?;
                    let record = EvalRecord {
                        image_id: image.id.clone(),
                        sample_index: s,
                        reference_index: *reference_index,
                        caption: caption.clone(),
                        condition,
                        cosine,
                        generated_image_id: generated.id.clone(),
                        cache_hits: StageCacheHits {
                            caption: caption_hit,
                            generate: gen_hit,
                            embed_original: original_hit,
                            embed_generated: emb_hit,
                        },
                        provider_ids: providers.clone(),
                    };
                    record.check().map_err(|e| e.to_string())?;
                    Ok(Scored { record })
                })();
                out.push(scored.map_err(|message: String| RecordFailure {
                    image_id: image.id.clone(),
                    sample_index: s,
                    message,
                }));
            }
        }
        out
    }

    fn baseline(&self, entry: &DatasetEntry, caption: &Caption) -> Result<Option<BaselineRow>> {
        if entry.references.is_empty() {
            return Ok(None);
        }
        let refs = entry.reference_texts();
        let score = bleu(&caption.text, &refs, &BleuParams::default())?;
        let text2text = if self.providers.text_embedder.is_some() {
            Some(text_to_text_similarity(&caption.text, &refs, |t| {
                self.embed_text(t)
            })?)
        } else {
            None
        };
        Ok(Some(BaselineRow {
            image_id: entry.image.id.clone(),
            bleu: score,
            text2text,
        }))
    }

    fn pool(config: &RunConfig) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.max_parallel)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
    }

    fn snapshot(&self, config: &RunConfig) -> RunConfig {
        let id = |d: Option<&ProviderDescriptor>| d.map(|d| d.id.clone());
        RunConfig {
            captioner_id: id(self.providers.captioner.as_ref().map(|p| p.descriptor())),
            generator_id: id(self.providers.generator.as_ref().map(|p| p.descriptor())),
            embedder_id: id(self
                .providers
                .image_embedder
                .as_ref()
                .map(|p| p.descriptor())),
            text_embedder_id: id(self
                .providers
                .text_embedder
                .as_ref()
                .map(|p| p.descriptor())),
            ..config.clone()
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        condition: Condition,
        config: &RunConfig,
        outcomes: Vec<std::result::Result<Scored, RecordFailure>>,
        baselines: Option<Vec<BaselineRow>>,
        mut warnings: Vec<String>,
        started_at: String,
    ) -> Result<RunResult> {
        let attempted = outcomes.len();
        let mut records = Vec::with_capacity(attempted);
        let mut failures = Vec::new();
        for outcome in outcomes {
            match outcome {
                Ok(s) => records.push(s.record),
                Err(f) => {
                    warn!(image_id = %f.image_id, sample = f.sample_index, message = %f.message, "record failed");
                    failures.push(f);
                }
            }
        }
        if attempted > 0 && failures.len() as f64 / attempted as f64 > config.failure_ceiling {
            return Err(Error::FailureCeiling {
                failed: failures.len(),
                total: attempted,
                ceiling: config.failure_ceiling,
            });
        }
        records.sort_by(|a, b| {
            (&a.image_id, a.sample_index, a.reference_index).cmp(&(
                &b.image_id,
                b.sample_index,
                b.reference_index,
            ))
        });
        failures.sort_by(|a, b| (&a.image_id, a.sample_index).cmp(&(&b.image_id, b.sample_index)));
        warnings.sort();

        let cosines: Vec<f64> = records.iter().map(|r| r.cosine).collect();
        let summary = aggregate(&cosines);
        let stats = self.stats();
        info!(
            %condition,
            n = records.len(),
            failed = failures.len(),
            mean = ?summary.mean,
            provider_calls = stats.provider_calls,
            cache_hit_rate = ?stats.cache_hit_rate(),
            "run finished"
        );
        Ok(RunResult {
            condition,
            config: self.snapshot(config),
            records,
            summary,
            baselines,
            failures,
            warnings,
            providers: self.providers.descriptors(),
            metadata: RunMetadata::new(config),
            stats,
            started_at,
            finished_at: chrono::Utc::now().to_rfc3339(),
        })
    }

    /// Scores a captioning model: one record per (entry, sample).
    pub fn evaluate_model(
        &self,
        dataset: &[DatasetEntry],
        config: &RunConfig,
    ) -> Result<RunResult> {
        config.validate()?;
        for (name, present) in [
            ("captioner", self.providers.captioner.is_some()),
            ("generator", self.providers.generator.is_some()),
            ("image embedder", self.providers.image_embedder.is_some()),
        ] {
            if !present {
                return Err(Error::Config(format!("{name} is not configured")));
            }
        }
        self.reset_counters();
        let started_at = chrono::Utc::now().to_rfc3339();

        let per_entry: Vec<(Vec<_>, Option<BaselineRow>, Option<String>)> = Self::pool(config)?
            .install(|| {
                dataset
                    .par_iter()
                    .map(|entry| {
                        let (caption, hit) = match self.caption(&entry.image, config) {
                            Ok(c) => c,
                            Err(e) => {
                                let failures = (0..config.samples_per_caption)
                                    .map(|s| {
                                        Err(RecordFailure {
                                            image_id: entry.image.id.clone(),
                                            sample_index: s,
                                            message: format!("caption: {e}"),
                                        })
                                    })
                                    .collect();
                                return (failures, None, None);
                            }
                        };
                        let (baseline, warning) = match self.baseline(entry, &caption) {
                            Ok(b) => (b, None),
                            Err(e) => (None, Some(format!("{}: baseline: {e}", entry.image.id))),
                        };
                        let job = Job {
                            entry,
                            captions: vec![(None, caption)],
                        };
                        (
                            self.score_entry(&job, Condition::Model, Some(hit), config),
                            baseline,
                            warning,
                        )
                    })
                    .collect()
            });

        let mut outcomes = Vec::new();
        let mut baselines = Vec::new();
        let mut warnings = Vec::new();
        for (o, b, w) in per_entry {
            outcomes.extend(o);
            baselines.extend(b);
            warnings.extend(w);
        }
        baselines.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        self.finish(
            Condition::Model,
            config,
            outcomes,
            Some(baselines),
            warnings,
            started_at,
        )
    }

    /// Runs the correct or incorrect arm of the validation protocol. The
    /// captioner is not used.
    pub fn human_validation_run(
        &self,
        dataset: &[DatasetEntry],
        condition: Condition,
        config: &RunConfig,
    ) -> Result<RunResult> {
        config.validate()?;
        if condition == Condition::Model {
            return Err(Error::Precondition(
                "validation runs use the correct or incorrect condition".into(),
            ));
        }
        for (name, present) in [
            ("generator", self.providers.generator.is_some()),
            ("image embedder", self.providers.image_embedder.is_some()),
        ] {
            if !present {
                return Err(Error::Config(format!("{name} is not configured")));
            }
        }
        self.reset_counters();
        let started_at = chrono::Utc::now().to_rfc3339();

        let mut warnings = Vec::new();
        let usable: Vec<&DatasetEntry> = dataset
            .iter()
            .filter(|e| {
                let ok = !e.references.is_empty();
                if !ok {
                    warnings.push(format!("{}: no references, skipped", e.image.id));
                }
                ok
            })
            .collect();
        if condition == Condition::Incorrect && usable.len() < 2 {
            return Err(Error::DatasetTooSmall(usable.len()));
        }

        let mut outcomes = Vec::new();
        let mut jobs = Vec::new();
        for entry in &usable {
            let captions = match condition {
                Condition::Correct => match config.reference_mode {
                    ReferenceMode::Single => match entry.references.get(config.reference_index) {
                        Some(c) => vec![(Some(config.reference_index), c.clone())],
                        None => {
                            outcomes.extend((0..config.samples_per_caption).map(|s| {
                                Err(RecordFailure {
                                    image_id: entry.image.id.clone(),
                                    sample_index: s,
                                    message: format!(
                                        "no reference at index {}",
                                        config.reference_index
                                    ),
                                })
                            }));
                            continue;
                        }
                    },
                    ReferenceMode::AllReferences => entry
                        .references
                        .iter()
                        .cloned()
                        .enumerate()
                        .map(|(i, c)| (Some(i), c))
                        .collect(),
                },
                _ => vec![(None, select_incorrect_caption(entry, dataset, config.seed)?)],
            };
            jobs.push(Job { entry, captions });
        }

        let scored: Vec<Vec<_>> = Self::pool(config)?.install(|| {
            jobs.par_iter()
                .map(|job| self.score_entry(job, condition, None, config))
                .collect()
        });
        outcomes.extend(scored.into_iter().flatten());
        self.finish(condition, config, outcomes, None, warnings, started_at)
    }
}

/// Runs the model pipeline over `dataset` with the cache named in `config`.
pub fn evaluate_model(
    dataset: &[DatasetEntry],
    providers: Providers,
    config: &RunConfig,
) -> Result<RunResult> {
    Pipeline::from_config(providers, config)?.evaluate_model(dataset, config)
}

/// Runs one validation arm over `dataset` with the cache named in `config`.
pub fn human_validation_run(
    dataset: &[DatasetEntry],
    providers: Providers,
    condition: Condition,
    config: &RunConfig,
) -> Result<RunResult> {
    Pipeline::from_config(providers, config)?.human_validation_run(dataset, condition, config)
}

/// A human caption of a different image: another entry drawn uniformly,
/// then one of its references drawn uniformly, from a stream keyed by
/// `(seed, entry id)`.
pub fn select_incorrect_caption(
    entry: &DatasetEntry,
    dataset: &[DatasetEntry],
    seed: u64,
) -> Result<Caption> {
    let candidates: Vec<&DatasetEntry> = dataset
        .iter()
        .filter(|e| e.image.id != entry.image.id && !e.references.is_empty())
        .collect();
    if candidates.is_empty() {
        let with_refs = dataset.iter().filter(|e| !e.references.is_empty()).count();
        return Err(Error::DatasetTooSmall(with_refs));
    }
    let mut rng = StreamKey::new("incorrect-caption", seed)
        .bytes(entry.image.id.as_bytes())
        .rng();
    let other = candidates[rng.random_range(0..candidates.len())];
    let reference = &other.references[rng.random_range(0..other.references.len())];
    Caption::new(
        reference.text.clone(),
        CaptionOrigin::Replacement,
        other.image.id.clone(),
    )
}

/// Pairs two runs image by image (averaging samples within each image) and
/// contrasts their mean cosines.
pub fn compute_gap(correct: &RunResult, incorrect: &RunResult) -> Result<GapReport> {
    let a = correct.per_image_cosines();
    let b = incorrect.per_image_cosines();
    let only_first: Vec<String> = a.keys().filter(|k| !b.contains_key(*k)).cloned().collect();
    let only_second: Vec<String> = b.keys().filter(|k| !a.contains_key(*k)).cloned().collect();
    if !only_first.is_empty() || !only_second.is_empty() {
        return Err(Error::ImageSetMismatch {
            only_first,
            only_second,
        });
    }
    let per_image: Vec<GapRow> = a
        .iter()
        .map(|(id, &c)| GapRow {
            image_id: id.clone(),
            cosine_correct: c,
            cosine_incorrect: b[id],
        })
        .collect();
    let stats_c = aggregate(
        &per_image
            .iter()
            .map(|r| r.cosine_correct)
            .collect::<Vec<_>>(),
    );
    let stats_i = aggregate(
        &per_image
            .iter()
            .map(|r| r.cosine_incorrect)
            .collect::<Vec<_>>(),
    );
    let mean_correct = stats_c.mean.unwrap_or(0.0);
    let mean_incorrect = stats_i.mean.unwrap_or(0.0);
    Ok(GapReport {
        mean_correct,
        mean_incorrect,
        gap: mean_correct - mean_incorrect,
        std_correct: stats_c.std.unwrap_or(0.0),
        std_incorrect: stats_i.std.unwrap_or(0.0),
        n: per_image.len(),
        per_image,
    })
}
