//! JSON-over-HTTP providers and the retrying call layer they share.
//!
//! All four adapters POST a JSON body to their endpoint with an optional
//! bearer token read from an environment variable:
//!
//! | kind            | request body                                             | response body                               |
//! |-----------------|----------------------------------------------------------|---------------------------------------------|
//! | captioner       | `{model, prompt, max_tokens, image: {media_type, data}}` | `{text}`                                    |
//! | generator       | `{model, prompt, sample_index}`                          | `{image: {media_type, data}}`               |
//! | image embedder  | `{model, image: {media_type, data}}`                     | `{values: [..]}`                            |
//! | text embedder   | `{model, text}`                                          | `{values: [..]}`                            |
//!
//! `data` is base64. Services with other shapes sit behind a small proxy.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{
    caption_token_count, check_embedding, require_text, Captioner, ImageEmbedder, ImageGenerator,
    ProviderDescriptor, ProviderKind, TextEmbedder,
};
use crate::domain::{Caption, CaptionOrigin, ImageRef, ImageSource};
use crate::error::{Error, Result};
use crate::stream::StreamKey;
use crate::Embedding;

/// Endpoint settings for one HTTP provider, as written in a run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HttpSettings {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    /// Required for embedders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
}

fn default_timeout() -> f64 {
    60.0
}

fn default_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    500
}

impl HttpSettings {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpSettings {
            endpoint: endpoint.into(),
            model: model.into(),
            credential_env: None,
            timeout_secs: default_timeout(),
            retries: default_retries(),
            backoff_base_ms: default_backoff_ms(),
            embedding_dim: None,
        }
    }

    /// Reads the credential named by `credential_env`. Fails before any
    /// network traffic when the variable is unset or empty.
    pub fn resolve_credential(&self) -> Result<Option<String>> {
        let Some(var) = &self.credential_env else {
            return Ok(None);
        };
        match std::env::var(var) {
            Ok(value) if !value.trim().is_empty() => Ok(Some(value)),
            _ => Err(Error::Config(format!(
                "credential environment variable {var} is not set"
            ))),
        }
    }

    fn timeout(&self) -> Result<Duration> {
        Duration::try_from_secs_f64(self.timeout_secs)
            .ok()
            .filter(|d| !d.is_zero())
            .ok_or_else(|| Error::Config(format!("invalid timeout {}", self.timeout_secs)))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TransportFailure {
    Timeout,
    Connection(String),
}

/// Sends one POST; no retries, no status interpretation.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &[u8],
        timeout: Duration,
    ) -> std::result::Result<RawResponse, TransportFailure>;
}

const MAX_RESPONSE_BYTES: u64 = 256 * 1024 * 1024;

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl Default for UreqTransport {
    fn default() -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build();
        UreqTransport {
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &[u8],
        timeout: Duration,
    ) -> std::result::Result<RawResponse, TransportFailure> {
        let mut request = self
            .agent
            .post(url)
            .config()
            .timeout_global(Some(timeout))
            .build()
            .header("content-type", "application/json")
            .header("accept", "application/json");
        if let Some(token) = bearer {
            request = request.header("authorization", format!("Bearer {token}"));
        }
        let classify = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => TransportFailure::Timeout,
            other => TransportFailure::Connection(other.to_string()),
        };
        let mut response = request.send(body).map_err(classify)?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .with_config()
            .limit(MAX_RESPONSE_BYTES)
            .read_to_vec()
            .map_err(classify)?;
        Ok(RawResponse { status, body })
    }
}

/// Retry policy shared by every HTTP provider: up to `max_retries` retries
/// on 429 and 5xx, exponential backoff from `base_delay` capped at
/// `max_delay`, with multiplicative jitter in `[0.5, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn is_retryable(status: u16) -> bool {
        status == 429 || (500..600).contains(&status)
    }

    /// Delay before retry number `retry` (0-based). Jitter is drawn from a
    /// stream keyed by the URL and retry number, so delays replay exactly.
    pub fn delay(&self, url: &str, retry: u32) -> Duration {
        let exp = self.base_delay.saturating_mul(1u32 << retry.min(20));
        let capped = exp.min(self.max_delay);
        let jitter: f64 = StreamKey::new("http-jitter", 0)
            .bytes(url.as_bytes())
            .u64(retry as u64)
            .rng()
            .random_range(0.5..1.0);
        capped.mul_f64(jitter)
    }
}

#[derive(Clone, Debug)]
pub struct ProviderRequest {
    pub url: String,
    pub bearer: Option<String>,
    pub body: Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProviderResponse {
    pub status: u16,
    pub body: Value,
    pub attempts: u32,
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// The call layer beneath every HTTP provider.
#[derive(Clone)]
pub struct HttpClient {
    transport: Arc<dyn Transport>,
    policy: RetryPolicy,
    timeout: Duration,
    sleep: Sleeper,
}

impl HttpClient {
    pub fn new(transport: Arc<dyn Transport>, policy: RetryPolicy, timeout: Duration) -> Self {
        HttpClient {
            transport,
            policy,
            timeout,
            sleep: Arc::new(std::thread::sleep),
        }
    }

    /// Replaces the sleep used between retries (tests record delays instead).
    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Arc::new(sleep);
        self
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }

    /// Sends `request`, retrying 429/5xx and connection failures.
    /// 401/403 fail at once with [`Error::Auth`]; other statuses ≥ 400 fail
    /// at once with [`Error::Transport`]; timeouts fail with [`Error::Timeout`].
    pub fn call(&self, request: &ProviderRequest) -> Result<ProviderResponse> {
        let body = serde_json::to_vec(&request.body)?;
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let started = Instant::now();
            let outcome = self.transport.post_json(
                &request.url,
                request.bearer.as_deref(),
                &body,
                self.timeout,
            );
            let latency_ms = started.elapsed().as_secs_f64() * 1e3;

            let (status, message) = match outcome {
                Ok(raw) => {
                    debug!(url = %request.url, status = raw.status, attempt, latency_ms, cache_miss = true, "provider call");
                    match raw.status {
                        200..=299 => {
                            let body = serde_json::from_slice(&raw.body).map_err(|e| {
                                Error::Protocol(format!(
                                    "{}: response is not JSON: {e}",
                                    request.url
                                ))
                            })?;
                            return Ok(ProviderResponse {
                                status: raw.status,
                                body,
                                attempts: attempt,
                            });
                        }
                        401 | 403 => return Err(Error::Auth { status: raw.status }),
                        s if RetryPolicy::is_retryable(s) => (
                            Some(s),
                            String::from_utf8_lossy(&raw.body)
                                .chars()
                                .take(200)
                                .collect(),
                        ),
                        s => {
                            return Err(Error::Transport {
                                status: Some(s),
                                attempts: attempt,
                                message: String::from_utf8_lossy(&raw.body)
                                    .chars()
                                    .take(200)
                                    .collect(),
                            })
                        }
                    }
                }
                Err(TransportFailure::Timeout) => {
                    debug!(url = %request.url, attempt, latency_ms, cache_miss = true, "provider call timed out");
                    return Err(Error::Timeout(self.timeout));
                }
                Err(TransportFailure::Connection(message)) => {
                    debug!(url = %request.url, attempt, latency_ms, cache_miss = true, %message, "provider call failed");
                    (None, message)
                }
            };

            if attempt > self.policy.max_retries {
                return Err(Error::Transport {
                    status,
                    attempts: attempt,
                    message,
                });
            }
            let delay = self.policy.delay(&request.url, attempt - 1);
            warn!(url = %request.url, ?status, attempt, delay_ms = delay.as_millis() as u64, "retrying provider call");
            (self.sleep)(delay);
        }
    }
}

/// Shared state of one configured HTTP provider.
struct Endpoint {
    settings: HttpSettings,
    bearer: Option<String>,
    client: HttpClient,
    descriptor: ProviderDescriptor,
}

impl Endpoint {
    fn new(
        settings: HttpSettings,
        transport: Arc<dyn Transport>,
        kind: ProviderKind,
        role: &str,
    ) -> Result<Self> {
        let bearer = settings.resolve_credential()?;
        let policy = RetryPolicy {
            max_retries: settings.retries,
            base_delay: Duration::from_millis(settings.backoff_base_ms),
            ..RetryPolicy::default()
        };
        let client = HttpClient::new(transport, policy, settings.timeout()?);
        let id = format!("http-{role}:{}@{}", settings.model, settings.endpoint);
        let descriptor = match kind {
            ProviderKind::ImageEmbedder | ProviderKind::TextEmbedder => {
                let dim = settings.embedding_dim.filter(|d| *d > 0).ok_or_else(|| {
                    Error::Config(format!("{id}: embedders must declare embedding_dim"))
                })?;
                ProviderDescriptor::embedder(id, kind, dim, false)
            }
            _ => ProviderDescriptor::new(id, kind, false),
        };
        Ok(Endpoint {
            settings,
            bearer,
            client,
            descriptor,
        })
    }

    fn post(&self, mut body: Value) -> Result<Value> {
        body["model"] = Value::String(self.settings.model.clone());
        let response = self.client.call(&ProviderRequest {
            url: self.settings.endpoint.clone(),
            bearer: self.bearer.clone(),
            body,
        })?;
        Ok(response.body)
    }

    fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.client = self.client.with_sleeper(sleep);
        self
    }
}

fn media_type_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("png") => "image/png",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        Some("bmp") => "image/bmp",
        _ => "application/octet-stream",
    }
}

fn image_payload(image: &ImageRef) -> Result<Value> {
    let (media_type, data) = match &image.source {
        ImageSource::File { path } => (
            media_type_for(path).to_string(),
            std::fs::read(path).map_err(|e| Error::io(path, e))?,
        ),
        ImageSource::Bytes { media_type, data } => (media_type.clone(), data.clone()),
        ImageSource::Synthetic { .. } => return Err(Error::UnresolvableImage(image.id.clone())),
    };
    Ok(json!({ "media_type": media_type, "data": STANDARD.encode(data) }))
}

fn field<'a>(body: &'a Value, name: &str, id: &str) -> Result<&'a Value> {
    body.get(name)
        .ok_or_else(|| Error::Protocol(format!("{id}: response lacks field {name:?}")))
}

fn values_field(body: &Value, descriptor: &ProviderDescriptor) -> Result<Embedding> {
    let values: Vec<f64> =
        serde_json::from_value(field(body, "values", &descriptor.id)?.clone())
            .map_err(|e| Error::Protocol(format!("{}: bad values: {e}", descriptor.id)))?;
    check_embedding(values, descriptor)
}

macro_rules! http_provider {
    ($name:ident, $kind:expr, $role:literal) => {
        pub struct $name {
            endpoint: Endpoint,
        }

        impl $name {
            /// Fails with a configuration error when the credential is missing.
            pub fn new(settings: HttpSettings, transport: Arc<dyn Transport>) -> Result<Self> {
                Ok($name {
                    endpoint: Endpoint::new(settings, transport, $kind, $role)?,
                })
            }

            pub fn with_sleeper(self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
                $name {
                    endpoint: self.endpoint.with_sleeper(sleep),
                }
            }
        }
    };
}

http_provider!(HttpCaptioner, ProviderKind::Captioner, "captioner");
http_provider!(HttpGenerator, ProviderKind::Generator, "generator");
http_provider!(
    HttpImageEmbedder,
    ProviderKind::ImageEmbedder,
    "image-embedder"
);
http_provider!(
    HttpTextEmbedder,
    ProviderKind::TextEmbedder,
    "text-embedder"
);

impl Captioner for HttpCaptioner {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.endpoint.descriptor
    }

    fn caption(&self, image: &ImageRef, prompt: &str, token_limit: usize) -> Result<Caption> {
        let body = self.endpoint.post(json!({
            "prompt": prompt,
            "max_tokens": token_limit,
            "image": image_payload(image)?,
        }))?;
        let id = &self.endpoint.descriptor.id;
        let text = field(&body, "text", id)?
            .as_str()
            .ok_or_else(|| Error::Protocol(format!("{id}: text is not a string")))?
            .trim();
        let tokens = caption_token_count(text);
        if tokens > token_limit {
            return Err(Error::OverTokenLimit {
                tokens,
                limit: token_limit,
            });
        }
        Caption::new(text, CaptionOrigin::Model, image.id.clone())
            .map_err(|_| Error::Protocol(format!("{id}: empty caption")))
    }
}

impl ImageGenerator for HttpGenerator {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.endpoint.descriptor
    }

    fn generate_image(&self, caption: &Caption, sample_index: u32) -> Result<ImageRef> {
        let body = self.endpoint.post(json!({
            "prompt": caption.text,
            "sample_index": sample_index,
        }))?;
        let id = &self.endpoint.descriptor.id;
        let image = field(&body, "image", id)?;
        let media_type = field(image, "media_type", id)?
            .as_str()
            .ok_or_else(|| Error::Protocol(format!("{id}: media_type is not a string")))?;
        let data = field(image, "data", id)?
            .as_str()
            .and_then(|d| STANDARD.decode(d).ok())
            .ok_or_else(|| Error::Protocol(format!("{id}: image data is not base64")))?;
        ImageRef::new(
            super::sim::generated_image_id(&caption.text, sample_index),
            ImageSource::Bytes {
                media_type: media_type.to_string(),
                data,
            },
        )
    }
}

impl ImageEmbedder for HttpImageEmbedder {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.endpoint.descriptor
    }

    fn embed_image(&self, image: &ImageRef) -> Result<Embedding> {
        let body = self
            .endpoint
            .post(json!({ "image": image_payload(image)? }))?;
        values_field(&body, &self.endpoint.descriptor)
    }
}

impl TextEmbedder for HttpTextEmbedder {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.endpoint.descriptor
    }

    fn embed_text(&self, text: &str) -> Result<Embedding> {
        require_text(text)?;
        let body = self.endpoint.post(json!({ "text": text }))?;
        values_field(&body, &self.endpoint.descriptor)
    }
}
