//! Text embedding backends.
//!
//! Retrieval and word-level similarity both go through the [`Embedder`]
//! trait. Two implementations ship: a deterministic offline embedder
//! ([`HashEmbedder`]) that hashes character n-grams into a fixed-width
//! signed bag, and an HTTP client ([`HttpEmbedder`]) for real encoder
//! services. The hash embedder L2-normalizes its vectors, so dot product
//! and cosine coincide on its output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textstats::tokenize;

/// Default dimension for the offline hash embedder.
pub const HASH_EMBEDDER_DIM: usize = 256;

/// Fixed-length real vector carrying a text embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("embedding vector is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "embedding vector has non-finite entries".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Cosine similarity, clamped to [-1, 1]. Zero vectors compare as 0.
    pub fn cosine(&self, other: &Self) -> f64 {
        let na = self.dot(self).sqrt();
        let nb = other.dot(other).sqrt();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        (self.dot(other) / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// A deterministic text-to-vector encoder.
///
/// Implementations must be pure: the same `(id, text)` pair always yields
/// the same vector.
pub trait Embedder: Send + Sync {
    /// Stable identifier recorded in stores built with this embedder.
    fn id(&self) -> &str;

    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<EmbeddingVector>;
}

/// FNV-1a, used wherever the crate needs a stable, platform-independent hash.
pub(crate) fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Offline deterministic embedder: hashed character trigram bag.
///
/// Each token is padded with boundary markers and decomposed into character
/// trigrams plus the whole padded token; every gram is hashed onto a signed
/// coordinate of a fixed-width vector, and the sum is L2-normalized.
/// Identical texts embed identically; texts sharing no character grams land
/// near-orthogonal.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    id: String,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(HASH_EMBEDDER_DIM)
    }
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedder dimension must be positive");
        Self {
            dim,
            id: format!("hash-trigram-{dim}"),
        }
    }

    fn add_token(&self, token: &str, acc: &mut [f64]) {
        let padded: Vec<char> = std::iter::once('^')
            .chain(token.chars())
            .chain(std::iter::once('$'))
            .collect();
        let mut push = |gram: &str| {
            let h = stable_hash(gram.as_bytes());
            let idx = (h % self.dim as u64) as usize;
            let sign = if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
            acc[idx] += sign;
        };
        if padded.len() < 3 {
            push(&padded.iter().collect::<String>());
            return;
        }
        for w in padded.windows(3) {
            push(&w.iter().collect::<String>());
        }
        push(&padded.iter().collect::<String>());
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut acc = vec![0.0; self.dim];
        for token in tokenize(text).tokens() {
            self.add_token(token, &mut acc);
        }
        let norm: f64 = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut acc {
                *v /= norm;
            }
        }
        EmbeddingVector::new(acc)
    }
}

/// Request body for the embedding endpoint: `{"texts": [...]}`.
#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: Vec<&'a str>,
}

/// Response body from the embedding endpoint: `{"embeddings": [[...], ...]}`.
#[derive(Debug, Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

/// Online embedder speaking the documented POST-a-text-list convention.
pub struct HttpEmbedder {
    id: String,
    url: String,
    credential_env: Option<String>,
    timeout: std::time::Duration,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(url: &str, credential_env: Option<&str>, timeout_secs: u64) -> Self {
        Self {
            id: format!("http:{url}"),
            url: url.to_string(),
            credential_env: credential_env.map(str::to_string),
            timeout: std::time::Duration::from_secs(timeout_secs),
            client: reqwest::blocking::Client::new(),
        }
    }

    fn credential(&self) -> Result<Option<String>> {
        match &self.credential_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| Error::MissingCredential(var.clone())),
        }
    }
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        // The service defines the width; callers learn it from the vectors.
        0
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let body = EmbedRequest { texts: vec![text] };
        let mut req = self
            .client
            .post(&self.url)
            .timeout(self.timeout)
            .json(&body);
        if let Some(token) = self.credential()? {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| Error::Endpoint(format!("embedding request failed: {e}")))?;
        if !resp.status().is_success() {
            return Err(Error::Endpoint(format!(
                "embedding endpoint returned {}",
                resp.status()
            )));
        }
        let parsed: EmbedResponse = resp
            .json()
            .map_err(|e| Error::Endpoint(format!("malformed embedding response: {e}")))?;
        let vector = parsed
            .embeddings
            .into_iter()
            .next()
            .ok_or_else(|| Error::Endpoint("embedding response is empty".into()))?;
        EmbeddingVector::new(vector)
    }
}
