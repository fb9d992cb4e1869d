use serde::{Deserialize, Serialize};
use serde_json::json;

use super::RetrievalError;
use crate::llm::http::{build_client, post_json_with_retry};
use crate::llm::{HttpSettings, ProviderError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    pub components: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(components: Vec<f64>) -> Self {
        EmbeddingVector { components }
    }

    pub fn dimension(&self) -> usize {
        self.components.len()
    }

    pub fn norm(&self) -> f64 {
        self.components.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a * b)
            .sum();
        dot / (self.norm() * other.norm())
    }
}

pub trait EmbeddingProvider: Send + Sync {
    /// One vector per input text, in input order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrievalError>;

    /// Stable identifier; index caches are keyed by it.
    fn id(&self) -> String;

    /// Upper bound on texts per `embed_batch` call.
    fn max_batch(&self) -> usize {
        32
    }
}

/// Embed and reject malformed output (wrong count, mixed dimension, zero or
/// non-finite vectors).
pub fn embed_checked(
    provider: &dyn EmbeddingProvider,
    texts: &[String],
) -> Result<Vec<EmbeddingVector>, RetrievalError> {
    let vectors = provider.embed_batch(texts)?;
    if vectors.len() != texts.len() {
        return Err(RetrievalError::Provider(ProviderError::BadResponse(
            format!("expected {} embeddings, got {}", texts.len(), vectors.len()),
        )));
    }
    let dim = vectors.first().map(EmbeddingVector::dimension).unwrap_or(0);
    for (text, v) in texts.iter().zip(&vectors) {
        if v.dimension() != dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: dim,
                found: v.dimension(),
            });
        }
        let n = v.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(RetrievalError::ZeroVector(text.clone()));
        }
    }
    Ok(vectors)
}

/// Hashed bag-of-words embedder: lowercase alphanumeric tokens, FNV-1a
/// bucketing, L2-normalised. Deterministic and offline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dimension: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder { dimension: 256 }
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl HashingEmbedder {
    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dimension as u64) as usize
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut v = vec![0.0; self.dimension];
        for token in tokenize(text) {
            v[self.bucket(&token)] += 1.0;
        }
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|c| *c /= norm);
        }
        EmbeddingVector::new(v)
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn id(&self) -> String {
        format!("hashing-{}", self.dimension)
    }

    fn max_batch(&self) -> usize {
        8
    }
}

/// OpenAI-style `/embeddings` client.
pub struct HttpEmbedder {
    settings: HttpSettings,
    client: reqwest::blocking::Client,
    batch: usize,
}

impl HttpEmbedder {
    pub fn new(settings: HttpSettings) -> Result<Self, ProviderError> {
        let client = build_client(&settings)?;
        Ok(HttpEmbedder {
            settings,
            client,
            batch: 64,
        })
    }

    pub fn with_batch_size(mut self, batch: usize) -> Self {
        self.batch = batch.max(1);
        self
    }
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

impl EmbeddingProvider for HttpEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        let url = self.settings.endpoint("embeddings");
        let body = json!({"model": self.settings.model, "input": texts});
        let resp = post_json_with_retry(&self.client, &self.settings, &url, &body)?;
        let data = resp
            .get("data")
            .cloned()
            .ok_or_else(|| ProviderError::BadResponse("embedding response has no 'data'".into()))?;
        let mut data: Vec<EmbeddingDatum> = serde_json::from_value(data)
            .map_err(|e| ProviderError::BadResponse(format!("embedding data: {e}")))?;
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index);
        }
        Ok(data
            .into_iter()
            .map(|d| EmbeddingVector::new(d.embedding))
            .collect())
    }

    fn id(&self) -> String {
        format!("http:{}", self.settings.model)
    }

    fn max_batch(&self) -> usize {
        self.batch
    }
}
