//! A seeded latent-vector world standing in for all four providers.
//!
//! Image `k` of the world has latent `u_k`: a unit vector of `dim` standard
//! normal draws keyed by `(seed, k)`. A caption is the latent, optionally
//! perturbed, quantized and hex-encoded as `SIMV1:<hex>`. Generation decodes
//! the hex and adds noise; image embedding applies a fixed seeded orthonormal
//! map, so cosines between latents survive embedding unchanged.
//!
//! Noise levels are relative: a perturbation with level `σ` is `σ·g/√dim`
//! with `g` standard normal per component, so its expected norm is `σ`
//! independent of the dimension.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    check_embedding, require_text, Captioner, ImageEmbedder, ImageGenerator, ProviderDescriptor,
    ProviderKind, Providers, TextEmbedder,
};
use crate::domain::{Caption, CaptionOrigin, DatasetEntry, ImageRef, ImageSource};
use crate::error::{Error, Result};
use crate::stream::StreamKey;
use crate::Embedding;

pub const CAPTION_PREFIX: &str = "SIMV1:";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimWorld {
    pub seed: u64,
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

impl SimWorld {
    pub fn new(
        seed: u64,
        dim: usize,
        caption_noise: f64,
        generation_noise: f64,
        quantization_bits: u32,
    ) -> Result<Self> {
        let world = SimWorld {
            seed,
            dim,
            caption_noise,
            generation_noise,
            quantization_bits,
        };
        world.validate()?;
        Ok(world)
    }

    /// Noiseless world with 16-bit quantization.
    pub fn noiseless(seed: u64, dim: usize) -> Result<Self> {
        Self::new(seed, dim, 0.0, 0.0, 16)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("sim world dim must be positive".into()));
        }
        for (name, sigma) in [
            ("caption_noise", self.caption_noise),
            ("generation_noise", self.generation_noise),
        ] {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::Config(format!(
                    "sim world {name} must be finite and ≥ 0"
                )));
            }
        }
        if !(8..=32).contains(&self.quantization_bits) {
            return Err(Error::Config(
                "sim world quantization_bits must lie in [8, 32]".into(),
            ));
        }
        Ok(())
    }

    /// Unit latent of world image `index`.
    pub fn latent(&self, index: u64) -> Vec<f64> {
        normalized(
            StreamKey::new("latent", self.seed)
                .u64(index)
                .gaussian(self.dim),
        )
    }

    fn noise(&self, key: StreamKey, sigma: f64) -> Vec<f64> {
        let scale = sigma / (self.dim as f64).sqrt();
        key.gaussian(self.dim)
            .into_iter()
            .map(|g| g * scale)
            .collect()
    }

    /// Renormalized `latent + caption_noise·ε`, or `latent` itself when noiseless.
    fn describe(&self, latent: &[f64], key: StreamKey) -> Vec<f64> {
        if self.caption_noise == 0.0 {
            return latent.to_vec();
        }
        let noise = self.noise(key, self.caption_noise);
        normalized(latent.iter().zip(noise).map(|(x, e)| x + e).collect())
    }

    fn max_level(&self) -> u64 {
        (1u64 << self.quantization_bits) - 1
    }

    fn hex_width(&self) -> usize {
        self.quantization_bits.div_ceil(4) as usize
    }

    /// Quantizes each component affinely from `[-1, 1]` onto
    /// `0..=2^bits - 1` and writes it as fixed-width big-endian hex.
    pub fn encode(&self, latent: &[f64]) -> String {
        let max = self.max_level() as f64;
        let width = self.hex_width();
        let mut out = String::with_capacity(CAPTION_PREFIX.len() + latent.len() * width);
        out.push_str(CAPTION_PREFIX);
        for &x in latent {
            let level = ((x.clamp(-1.0, 1.0) + 1.0) / 2.0 * max).round() as u64;
            out.push_str(&format!("{level:0width$x}"));
        }
        out
    }

    pub fn decode(&self, caption: &str) -> Result<Vec<f64>> {
        let hex = caption
            .trim()
            .strip_prefix(CAPTION_PREFIX)
            .ok_or_else(|| Error::Decode(format!("missing {CAPTION_PREFIX} prefix")))?;
        let width = self.hex_width();
        if !hex.is_ascii() || hex.len() != self.dim * width {
            return Err(Error::Decode(format!(
                "expected {} hex digits, found {}",
                self.dim * width,
                hex.len()
            )));
        }
        let max = self.max_level();
        hex.as_bytes()
            .chunks(width)
            .map(|chunk| {
                let digits = std::str::from_utf8(chunk).expect("ascii checked");
                let level = u64::from_str_radix(digits, 16)
                    .map_err(|_| Error::Decode(format!("invalid hex group {digits:?}")))?;
                if level > max {
                    return Err(Error::Decode(format!("level {level} exceeds {max}")));
                }
                Ok(level as f64 / max as f64 * 2.0 - 1.0)
            })
            .collect()
    }

    /// The `j`-th human reference of world image `index`.
    pub fn human_caption(&self, index: u64, j: u64) -> String {
        let key = StreamKey::new("human", self.seed).u64(index).u64(j);
        self.encode(&self.describe(&self.latent(index), key))
    }

    pub fn image_id(index: u64) -> String {
        format!("sim-{index:06}")
    }

    /// `n` world images (indices `0..n`) with `refs` human references each.
    pub fn synthetic_dataset(&self, n: u64, refs: u64) -> Vec<DatasetEntry> {
        (0..n)
            .map(|k| {
                let image = ImageRef::synthetic(Self::image_id(k), self.seed, k)
                    .expect("synthetic id is non-empty");
                let texts: Vec<String> = (0..refs).map(|j| self.human_caption(k, j)).collect();
                DatasetEntry::from_texts(image, &texts).expect("encoded captions are non-empty")
            })
            .collect()
    }

    /// Latent behind an image this world can see.
    pub fn image_latent(&self, image: &ImageRef) -> Result<Vec<f64>> {
        match &image.source {
            ImageSource::Synthetic {
                latent: Some(v), ..
            } if v.len() == self.dim => Ok(v.clone()),
            ImageSource::Synthetic {
                world_seed,
                index,
                latent: None,
            } if *world_seed == self.seed => Ok(self.latent(*index)),
            _ => Err(Error::UnresolvableImage(image.id.clone())),
        }
    }

    /// The fixed orthonormal map applied by the image embedder.
    pub fn embedding_map(&self) -> OrthonormalMap {
        OrthonormalMap::seeded(StreamKey::new("embed-image", self.seed), self.dim)
    }

    fn tag(&self, role: &str) -> String {
        format!("sim-{role}:v1:seed={}:dim={}", self.seed, self.dim)
    }

    pub fn captioner(&self) -> SimCaptioner {
        SimCaptioner {
            descriptor: ProviderDescriptor::new(
                format!(
                    "{}:bits={}:noise={}",
                    self.tag("captioner"),
                    self.quantization_bits,
                    self.caption_noise
                ),
                ProviderKind::Captioner,
                true,
            ),
            world: self.clone(),
        }
    }

    pub fn generator(&self) -> SimGenerator {
        SimGenerator {
            descriptor: ProviderDescriptor::new(
                format!(
                    "{}:bits={}:noise={}",
                    self.tag("generator"),
                    self.quantization_bits,
                    self.generation_noise
                ),
                ProviderKind::Generator,
                true,
            ),
            world: self.clone(),
        }
    }

    pub fn image_embedder(&self) -> SimImageEmbedder {
        SimImageEmbedder {
            descriptor: ProviderDescriptor::embedder(
                self.tag("image-embedder"),
                ProviderKind::ImageEmbedder,
                self.dim,
                true,
            ),
            map: Arc::new(self.embedding_map()),
            world: self.clone(),
        }
    }

    pub fn text_embedder(&self) -> SimTextEmbedder {
        SimTextEmbedder {
            descriptor: ProviderDescriptor::embedder(
                self.tag("text-embedder"),
                ProviderKind::TextEmbedder,
                self.dim,
                true,
            ),
            world: self.clone(),
        }
    }

    /// All four sim providers.
    pub fn providers(&self) -> Providers {
        Providers {
            captioner: Some(Arc::new(self.captioner())),
            generator: Some(Arc::new(self.generator())),
            image_embedder: Some(Arc::new(self.image_embedder())),
            text_embedder: Some(Arc::new(self.text_embedder())),
        }
    }
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn digest(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

/// Id of a generated image: digest of the caption text plus the sample index.
pub fn generated_image_id(caption_text: &str, sample_index: u32) -> String {
    format!(
        "gen-{}-{sample_index}",
        &hex::encode(digest(caption_text))[..16]
    )
}

pub struct SimCaptioner {
    descriptor: ProviderDescriptor,
    world: SimWorld,
}

impl Captioner for SimCaptioner {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn caption(&self, image: &ImageRef, _prompt: &str, token_limit: usize) -> Result<Caption> {
        let latent = self.world.image_latent(image)?;
        let key = StreamKey::new("caption", self.world.seed).bytes(image.id.as_bytes());
        let text = self.world.encode(&self.world.describe(&latent, key));
        // A sim caption is a single whitespace token.
        if token_limit == 0 {
            return Err(Error::OverTokenLimit {
                tokens: 1,
                limit: 0,
            });
        }
        Caption::new(text, CaptionOrigin::Model, image.id.clone())
    }
}

pub struct SimGenerator {
    descriptor: ProviderDescriptor,
    world: SimWorld,
}

impl ImageGenerator for SimGenerator {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn generate_image(&self, caption: &Caption, sample_index: u32) -> Result<ImageRef> {
        let mut latent = self.world.decode(&caption.text)?;
        if self.world.generation_noise > 0.0 {
            let key = StreamKey::new("generate", self.world.seed)
                .bytes(&digest(&caption.text))
                .u64(sample_index as u64);
            let noise = self.world.noise(key, self.world.generation_noise);
            latent.iter_mut().zip(noise).for_each(|(x, e)| *x += e);
        }
        ImageRef::new(
            generated_image_id(&caption.text, sample_index),
            ImageSource::Synthetic {
                world_seed: self.world.seed,
                index: sample_index as u64,
                latent: Some(latent),
            },
        )
    }
}

pub struct SimImageEmbedder {
    descriptor: ProviderDescriptor,
    world: SimWorld,
    map: Arc<OrthonormalMap>,
}

impl ImageEmbedder for SimImageEmbedder {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed_image(&self, image: &ImageRef) -> Result<Embedding> {
        let latent = self.world.image_latent(image)?;
        check_embedding(self.map.apply(&latent), &self.descriptor)
    }
}

/// Hash-seeded unit Gaussian vector per exact text.
pub struct SimTextEmbedder {
    descriptor: ProviderDescriptor,
    world: SimWorld,
}

impl SimTextEmbedder {
    pub fn vector(world: &SimWorld, text: &str) -> Vec<f64> {
        normalized(
            StreamKey::new("embed-text", world.seed)
                .bytes(text.as_bytes())
                .gaussian(world.dim),
        )
    }
}

impl TextEmbedder for SimTextEmbedder {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed_text(&self, text: &str) -> Result<Embedding> {
        require_text(text)?;
        check_embedding(Self::vector(&self.world, text), &self.descriptor)
    }
}

/// Square matrix with orthonormal columns, stored column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthonormalMap {
    dim: usize,
    columns: Vec<f64>,
}

impl OrthonormalMap {
    /// Gram–Schmidt over seeded Gaussian columns. Each column is
    /// orthogonalized twice against its predecessors for accuracy.
    pub fn seeded(key: StreamKey, dim: usize) -> Self {
        let mut rng_key = key;
        loop {
            let raw = rng_key.clone().gaussian(dim * dim);
            if let Some(map) = Self::orthonormalize(raw, dim) {
                return map;
            }
            // Rank-deficient draw; practically unreachable.
            rng_key = rng_key.u64(0);
        }
    }

    fn orthonormalize(mut columns: Vec<f64>, dim: usize) -> Option<Self> {
        for j in 0..dim {
            let (done, rest) = columns.split_at_mut(j * dim);
            let col = &mut rest[..dim];
            for _pass in 0..2 {
                for prev in done.chunks(dim) {
                    let proj: f64 = prev.iter().zip(col.iter()).map(|(p, c)| p * c).sum();
                    col.iter_mut().zip(prev).for_each(|(c, p)| *c -= proj * p);
                }
            }
            let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-8 {
                return None;
            }
            col.iter_mut().for_each(|x| *x /= norm);
        }
        Some(OrthonormalMap { dim, columns })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j * self.dim..(j + 1) * self.dim]
    }

    /// `M·x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "orthonormal map dimension");
        let mut out = vec![0.0; self.dim];
        for (col, &xj) in self.columns.chunks(self.dim).zip(x) {
            out.iter_mut().zip(col).for_each(|(o, c)| *o += c * xj);
        }
        out
    }
}

/// Composes a fixed orthonormal map onto another image embedder's output.
pub struct RotatedEmbedder<E> {
    inner: E,
    map: OrthonormalMap,
    descriptor: ProviderDescriptor,
}

impl<E: ImageEmbedder> RotatedEmbedder<E> {
    pub fn new(inner: E, map: OrthonormalMap, label: &str) -> Result<Self> {
        let descriptor = ProviderDescriptor {
            id: format!("{}+rotate({label})", inner.descriptor().id),
            ..inner.descriptor().clone()
        };
        if descriptor.embedding_dim != Some(map.dim()) {
            return Err(Error::DimensionMismatch {
                left: descriptor.embedding_dim.unwrap_or(0),
                right: map.dim(),
            });
        }
        Ok(RotatedEmbedder {
            inner,
            map,
            descriptor,
        })
    }
}

impl<E: ImageEmbedder> ImageEmbedder for RotatedEmbedder<E> {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed_image(&self, image: &ImageRef) -> Result<Embedding> {
        let v = self.inner.embed_image(image)?;
        Embedding::new(self.map.apply(v.values()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::cosine_slices;

    fn world() -> SimWorld {
        SimWorld::new(42, 64, 0.0, 0.0, 16).unwrap()
    }

    #[test]
    fn latent_is_unit_and_deterministic() {
        let w = world();
        let a = w.latent(3);
        assert_eq!(a, w.latent(3));
        assert_ne!(a, w.latent(4));
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_caption_is_quantized_latent() {
        let w = world();
        let image = ImageRef::synthetic("k", 42, 5).unwrap();
        let caption = w.captioner().caption(&image, "p", 100).unwrap();
        assert_eq!(caption.origin, CaptionOrigin::Model);
        assert_eq!(caption.text, w.encode(&w.latent(5)));
        assert!(caption.text.starts_with("SIMV1:"));
        assert_eq!(caption.text.len(), 6 + 64 * 4);
        let again = w.captioner().caption(&image, "p", 100).unwrap();
        assert_eq!(caption.text, again.text);
    }

    #[test]
    fn quantization_error_is_bounded() {
        let w = world();
        let latent = w.latent(1);
        let decoded = w.decode(&w.encode(&latent)).unwrap();
        let step = 2.0 / 65535.0;
        for (a, b) in latent.iter().zip(&decoded) {
            assert!((a - b).abs() <= step / 2.0 + 1e-15);
        }
    }

    #[test]
    fn encoding_endpoints() {
        let w = SimWorld::new(0, 3, 0.0, 0.0, 8).unwrap();
        assert_eq!(w.encode(&[-1.0, 1.0, 0.0]), "SIMV1:00ff80");
        let w = SimWorld::new(0, 1, 0.0, 0.0, 10).unwrap();
        assert_eq!(w.encode(&[1.0]), "SIMV1:3ff");
        assert_eq!(w.decode("SIMV1:3ff").unwrap(), vec![1.0]);
        assert!(w.decode("SIMV1:400").is_err());
    }

    #[test]
    fn decode_rejects_garbage() {
        let w = world();
        let caption = Caption::new("garbage", CaptionOrigin::Human, "x").unwrap();
        assert!(matches!(
            w.generator().generate_image(&caption, 0),
            Err(Error::Decode(_))
        ));
        assert!(w.decode("SIMV1:abc").is_err());
        let bad_digit = format!("SIMV1:{}", "zz".repeat(128));
        assert!(w.decode(&bad_digit).is_err());
    }

    #[test]
    fn noiseless_generation_decodes_exactly() {
        let w = world();
        let text = w.encode(&w.latent(2));
        let caption = Caption::new(text.clone(), CaptionOrigin::Model, "x").unwrap();
        let image = w.generator().generate_image(&caption, 0).unwrap();
        assert_eq!(w.image_latent(&image).unwrap(), w.decode(&text).unwrap());
    }

    #[test]
    fn noisy_samples_differ_and_replay() {
        let w = SimWorld::new(42, 64, 0.0, 0.1, 16).unwrap();
        let caption = Caption::new(w.encode(&w.latent(2)), CaptionOrigin::Model, "x").unwrap();
        let g = w.generator();
        let a0 = w
            .image_latent(&g.generate_image(&caption, 0).unwrap())
            .unwrap();
        let a1 = w
            .image_latent(&g.generate_image(&caption, 1).unwrap())
            .unwrap();
        assert_ne!(a0, a1);
        assert_eq!(
            a0,
            w.image_latent(&g.generate_image(&caption, 0).unwrap())
                .unwrap()
        );

        // Independent recomputation of sample 1's noise from its key.
        let decoded = w.decode(&caption.text).unwrap();
        let digest: [u8; 32] = Sha256::digest(caption.text.as_bytes()).into();
        let g1 = StreamKey::new("generate", 42)
            .bytes(&digest)
            .u64(1)
            .gaussian(64);
        let scale = 0.1 / 8.0;
        for ((x, d), e) in a1.iter().zip(&decoded).zip(&g1) {
            assert!((x - (d + scale * e)).abs() < 1e-15);
        }
    }

    #[test]
    fn foreign_images_are_unresolvable() {
        let w = world();
        let other = ImageRef::synthetic("o", 7, 0).unwrap();
        assert!(matches!(
            w.image_embedder().embed_image(&other),
            Err(Error::UnresolvableImage(_))
        ));
        let file = ImageRef::file("f", "x.png").unwrap();
        assert!(w.captioner().caption(&file, "p", 100).is_err());
    }

    #[test]
    fn map_is_orthonormal_and_preserves_cosine() {
        let w = world();
        let m = w.embedding_map();
        for i in 0..m.dim() {
            for j in 0..m.dim() {
                let d: f64 = m
                    .column(i)
                    .iter()
                    .zip(m.column(j))
                    .map(|(a, b)| a * b)
                    .sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((d - expected).abs() < 1e-12, "({i},{j}) = {d}");
            }
        }
        let (a, b) = (w.latent(0), w.latent(1));
        let before = cosine_slices(&a, &b).unwrap();
        let after = cosine_slices(&m.apply(&a), &m.apply(&b)).unwrap();
        assert!((before - after).abs() < 1e-9);
    }

    #[test]
    fn identical_latents_identical_embeddings() {
        let w = world();
        let e = w.image_embedder();
        let a = ImageRef::synthetic("a", 42, 9).unwrap();
        let b = ImageRef::new(
            "b",
            ImageSource::Synthetic {
                world_seed: 42,
                index: 0,
                latent: Some(w.latent(9)),
            },
        )
        .unwrap();
        assert_eq!(e.embed_image(&a).unwrap(), e.embed_image(&b).unwrap());
        assert_eq!(e.embed_image(&a).unwrap().dim(), 64);
    }

    #[test]
    fn distinct_images_are_nearly_orthogonal() {
        let w = SimWorld::noiseless(42, 256).unwrap();
        let e = w.image_embedder();
        let mut within = 0;
        for k in 0..1000u64 {
            let a = e
                .embed_image(&ImageRef::synthetic("a", 42, 2 * k).unwrap())
                .unwrap();
            let b = e
                .embed_image(&ImageRef::synthetic("b", 42, 2 * k + 1).unwrap())
                .unwrap();
            if cosine_slices(a.values(), b.values()).unwrap().abs() <= 0.3 {
                within += 1;
            }
        }
        assert!(within >= 990, "{within}/1000");
    }

    #[test]
    fn text_embeddings() {
        let w = SimWorld::noiseless(42, 256).unwrap();
        let t = w.text_embedder();
        assert_eq!(
            t.embed_text("a dog").unwrap(),
            t.embed_text("a dog").unwrap()
        );
        assert!(matches!(t.embed_text(""), Err(Error::Precondition(_))));
        let mut within = 0;
        for k in 0..1000 {
            let a = t.embed_text(&format!("text a {k}")).unwrap();
            let b = t.embed_text(&format!("text b {k}")).unwrap();
            if cosine_slices(a.values(), b.values()).unwrap().abs() <= 0.3 {
                within += 1;
            }
        }
        assert!(within >= 990, "{within}/1000");
    }

    #[test]
    fn rotated_embedder_keeps_cosines() {
        let w = world();
        let rot = OrthonormalMap::seeded(StreamKey::new("extra", 1), 64);
        let rotated = RotatedEmbedder::new(w.image_embedder(), rot, "extra").unwrap();
        let plain = w.image_embedder();
        let a = ImageRef::synthetic("a", 42, 0).unwrap();
        let b = ImageRef::synthetic("b", 42, 1).unwrap();
        let c1 = cosine_slices(
            plain.embed_image(&a).unwrap().values(),
            plain.embed_image(&b).unwrap().values(),
        )
        .unwrap();
        let c2 = cosine_slices(
            rotated.embed_image(&a).unwrap().values(),
            rotated.embed_image(&b).unwrap().values(),
        )
        .unwrap();
        assert!((c1 - c2).abs() < 1e-9);
        assert_ne!(rotated.descriptor().id, plain.descriptor().id);
    }

    #[test]
    fn world_validation() {
        assert!(SimWorld::new(0, 0, 0.0, 0.0, 16).is_err());
        assert!(SimWorld::new(0, 4, -0.1, 0.0, 16).is_err());
        assert!(SimWorld::new(0, 4, 0.0, 0.0, 7).is_err());
        assert!(SimWorld::new(0, 4, 0.0, 0.0, 33).is_err());
        assert!(SimWorld::new(0, 4, 0.0, 0.0, 32).is_ok());
    }
}
