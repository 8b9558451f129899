//! Embedding providers and unit-norm sentence vectors.
//!
//! Every vector that leaves this module has passed through [`normalize`], so
//! cosine similarity downstream is a plain dot product.

use std::sync::OnceLock;
use std::thread;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SentenceRecord;

pub const DEFAULT_DIMENSION: usize = 384;
pub const DEFAULT_BATCH_SIZE: usize = 64;

/// Allowed deviation of a stored vector's norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("vector contains NaN or infinite components")]
    NonFinite,
    #[error("vector norm {norm} is not within {UNIT_NORM_TOLERANCE} of 1")]
    NotUnitNorm { norm: f64 },
    #[error("dimension mismatch: expected {expected}, provider returned {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding provider unavailable after {attempts} attempt(s): {message}")]
    ProviderUnavailable { attempts: usize, message: String },
    #[error("embedding provider protocol error: {0}")]
    Protocol(String),
    #[error("sentence {0:?} has empty text")]
    EmptySentence(String),
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = EmbedError> = std::result::Result<T, E>;

/// A unit-norm sentence embedding. Construction validates the invariants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    sentence_id: String,
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(sentence_id: impl Into<String>, values: Vec<f32>) -> Result<Self> {
        check_unit(&values)?;
        Ok(Self { sentence_id: sentence_id.into(), values })
    }

    /// Normalizes `values` before wrapping them.
    pub fn from_raw(sentence_id: impl Into<String>, values: &[f32]) -> Result<Self> {
        Ok(Self { sentence_id: sentence_id.into(), values: normalize(values)? })
    }

    pub fn sentence_id(&self) -> &str {
        &self.sentence_id
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn into_parts(self) -> (String, Vec<f32>) {
        (self.sentence_id, self.values)
    }
}

fn check_unit(values: &[f32]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(EmbedError::NonFinite);
    }
    let norm = l2_norm(values);
    if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(EmbedError::NotUnitNorm { norm });
    }
    Ok(())
}

pub fn l2_norm(values: &[f32]) -> f64 {
    values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

/// Scales `values` to unit Euclidean norm. Accumulates in f64.
pub fn normalize(values: &[f32]) -> Result<Vec<f32>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(EmbedError::NonFinite);
    }
    let norm = l2_norm(values);
    if norm == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok(values.iter().map(|&v| (v as f64 / norm) as f32).collect())
}

/// Dot product of two unit vectors, i.e. their cosine similarity.
pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    crate::vindex::dot(a, b)
}

// ---------------------------------------------------------------------------
// Feature-hashing test provider

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn add_feature(v: &mut [f64], namespace: u8, feature: &[u8]) {
    let mut h = fnv1a64(&[namespace]);
    for &b in feature {
        h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
    }
    let bucket = (h % v.len() as u64) as usize;
    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
    v[bucket] += sign;
}

/// Deterministic feature-hashing embedding.
///
/// The text is lower-cased, every non-alphanumeric character becomes a space,
/// and whitespace is collapsed. Features are the character 3-grams of that
/// string (padded with one space on each side) plus its word unigrams. Each
/// feature is hashed with
/// FNV-1a 64 into one of `dimension` buckets with a sign taken from the top
/// hash bit; the result is L2-normalized.
pub fn hash_embed(text: &str, dimension: usize) -> Vec<f32> {
    assert!(dimension > 0, "dimension must be positive");
    let lowered: String =
        text.to_lowercase().chars().map(|c| if c.is_alphanumeric() { c } else { ' ' }).collect();
    let collapsed = format!(" {} ", lowered.split_whitespace().collect::<Vec<_>>().join(" "));
    let chars: Vec<char> = collapsed.chars().collect();
    let mut acc = vec![0f64; dimension];
    let mut buf = [0u8; 12];
    for gram in chars.windows(3) {
        let mut len = 0;
        for c in gram {
            len += c.encode_utf8(&mut buf[len..]).len();
        }
        add_feature(&mut acc, b'c', &buf[..len]);
    }
    for word in lowered.split_whitespace() {
        add_feature(&mut acc, b'w', word.as_bytes());
    }
    if acc.iter().all(|&x| x == 0.0) {
        // Only possible for input without alphanumerics, or exact cancellation.
        add_feature(&mut acc, b'e', text.as_bytes());
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    acc.iter().map(|&x| (x / norm) as f32).collect()
}

// ---------------------------------------------------------------------------
// Providers

pub trait EmbeddingProvider: Send + Sync {
    /// Model identifier recorded in index manifests.
    fn model_id(&self) -> Result<String>;

    fn dimension(&self) -> usize;

    /// Raw (not necessarily normalized) vectors, one per text, in order.
    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>>;
}

#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self { dimension }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn model_id(&self) -> Result<String> {
        Ok(format!("hash-embed-v1/d{}", self.dimension))
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        Ok(texts.iter().map(|t| hash_embed(t, self.dimension)).collect())
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
    dimension: usize,
    model: String,
}

/// Client for `POST {endpoint}/embed`.
pub struct RemoteEmbedder {
    endpoint: String,
    dimension: usize,
    agent: ureq::Agent,
    model: OnceLock<String>,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, dimension: usize, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            dimension,
            agent,
            model: OnceLock::new(),
        }
    }

    fn request(&self, texts: &[&str]) -> Result<EmbedResponse> {
        let url = format!("{}/embed", self.endpoint);
        let resp = self.agent.post(&url).send_json(EmbedRequest { texts });
        let resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) if code >= 500 || code == 429 => {
                return Err(unavailable(format!("HTTP {code} {}", r.status_text())));
            }
            Err(ureq::Error::Status(code, r)) => {
                return Err(EmbedError::Protocol(format!("HTTP {code} {}", r.status_text())));
            }
            Err(e) => return Err(unavailable(e.to_string())),
        };
        let body: EmbedResponse = resp
            .into_json()
            .map_err(|e| EmbedError::Protocol(format!("malformed response: {e}")))?;
        if body.dimension != self.dimension {
            return Err(EmbedError::DimensionMismatch { expected: self.dimension, found: body.dimension });
        }
        let recorded = self.model.get_or_init(|| body.model.clone());
        if *recorded != body.model {
            return Err(EmbedError::Protocol(format!(
                "model changed from {recorded:?} to {:?} mid-run",
                body.model
            )));
        }
        Ok(body)
    }
}

fn unavailable(message: String) -> EmbedError {
    EmbedError::ProviderUnavailable { attempts: 1, message }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn model_id(&self) -> Result<String> {
        if let Some(m) = self.model.get() {
            return Ok(m.clone());
        }
        self.request(&["model probe"])?;
        Ok(self.model.get().cloned().unwrap_or_default())
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        Ok(self.request(texts)?.vectors)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    RemoteService,
    HashTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingProviderConfig {
    pub provider_kind: ProviderKind,
    pub endpoint: Option<String>,
    pub dimension: usize,
    pub batch_size: usize,
    pub timeout_ms: u64,
    /// Additional attempts after a batch fails with `ProviderUnavailable`.
    pub max_retries: usize,
    pub retry_backoff_ms: u64,
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        Self {
            provider_kind: ProviderKind::HashTest,
            endpoint: None,
            dimension: DEFAULT_DIMENSION,
            batch_size: DEFAULT_BATCH_SIZE,
            timeout_ms: 30_000,
            max_retries: 3,
            retry_backoff_ms: 250,
        }
    }
}

impl EmbeddingProviderConfig {
    pub fn hash(dimension: usize) -> Self {
        Self { dimension, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(EmbedError::InvalidConfig("dimension must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(EmbedError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.provider_kind == ProviderKind::RemoteService && self.endpoint.is_none() {
            return Err(EmbedError::InvalidConfig("remote_service requires an endpoint".into()));
        }
        Ok(())
    }

    pub fn build_provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        self.validate()?;
        Ok(match self.provider_kind {
            ProviderKind::HashTest => Box::new(HashEmbedder::new(self.dimension)),
            ProviderKind::RemoteService => Box::new(RemoteEmbedder::new(
                self.endpoint.clone().unwrap_or_default(),
                self.dimension,
                Duration::from_millis(self.timeout_ms),
            )),
        })
    }
}

fn call_with_retry(
    provider: &dyn EmbeddingProvider,
    texts: &[&str],
    config: &EmbeddingProviderConfig,
) -> Result<Vec<Vec<f32>>> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match provider.embed_texts(texts) {
            Err(EmbedError::ProviderUnavailable { message, .. }) => {
                if attempt > config.max_retries {
                    return Err(EmbedError::ProviderUnavailable { attempts: attempt, message });
                }
                thread::sleep(Duration::from_millis(config.retry_backoff_ms * attempt as u64));
            }
            other => return other,
        }
    }
}

/// Embeds `sentences` in batches of `config.batch_size`, preserving order.
///
/// Batches are dispatched concurrently; each is retried on
/// `ProviderUnavailable` up to `config.max_retries` times.
pub fn embed_batch(
    sentences: &[SentenceRecord],
    provider: &dyn EmbeddingProvider,
    config: &EmbeddingProviderConfig,
) -> Result<Vec<EmbeddingVector>> {
    config.validate()?;
    if provider.dimension() != config.dimension {
        return Err(EmbedError::DimensionMismatch { expected: config.dimension, found: provider.dimension() });
    }
    if let Some(s) = sentences.iter().find(|s| s.text.trim().is_empty()) {
        return Err(EmbedError::EmptySentence(s.sentence_id.clone()));
    }
    let batches: Vec<Vec<EmbeddingVector>> = sentences
        .par_chunks(config.batch_size)
        .map(|chunk| {
            let texts: Vec<&str> = chunk.iter().map(|s| s.text.as_str()).collect();
            let raw = call_with_retry(provider, &texts, config)?;
            if raw.len() != chunk.len() {
                return Err(EmbedError::Protocol(format!(
                    "requested {} vectors, received {}",
                    chunk.len(),
                    raw.len()
                )));
            }
            chunk
                .iter()
                .zip(raw)
                .map(|(s, v)| {
                    if v.len() != config.dimension {
                        return Err(EmbedError::DimensionMismatch { expected: config.dimension, found: v.len() });
                    }
                    EmbeddingVector::from_raw(s.sentence_id.clone(), &v)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(batches.into_iter().flatten().collect())
}

/// Embeds a single text with `provider`, normalized.
pub fn embed_text(provider: &dyn EmbeddingProvider, text: &str) -> Result<Vec<f32>> {
    let mut raw = provider.embed_texts(&[text])?;
    let v = raw.pop().ok_or_else(|| EmbedError::Protocol("empty response".into()))?;
    if v.len() != provider.dimension() {
        return Err(EmbedError::DimensionMismatch { expected: provider.dimension(), found: v.len() });
    }
    normalize(&v)
}
