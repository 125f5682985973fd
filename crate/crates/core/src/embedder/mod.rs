//! Text embeddings.
//!
//! Every vector is L2-normalized when it is created, so similarity everywhere in the
//! crate is a plain dot product.

mod hash;
mod remote;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::Transport;
use crate::secret::Secret;

pub use hash::{fnv1a64, hash_embed, tokenize, HashEmbedder};
pub use remote::{RemoteEmbedder, RetryPolicy, EMBEDDING_BATCH_SIZE, MAX_INPUT_CHARS};

pub const DEFAULT_LOCAL_DIM: usize = 256;
pub const REMOTE_DIM: usize = 1536;
pub const DEFAULT_REMOTE_MODEL: &str = "text-embedding-ada-002";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com";

/// Tolerance on `|‖v‖₂ − 1|` for every stored or produced vector.
pub const NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("text #{index} is empty")]
    EmptyText { index: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("embedding provider error: {0}")]
    Provider(String),
    #[error("embedding provider rejected the credentials: {0}")]
    Unauthorized(String),
    #[error("invalid embedder configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot normalize a zero vector")]
    ZeroVector,
}

impl EmbedError {
    /// Errors that no retry or per-document skip can fix.
    pub fn is_configuration(&self) -> bool {
        matches!(self, EmbedError::Unauthorized(_) | EmbedError::InvalidConfig(_))
    }
}

/// A unit-norm vector of 32-bit components.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// Normalizes `values` to unit length.
    pub fn normalized(values: Vec<f32>) -> Result<Self, EmbedError> {
        let norm = values.iter().map(|v| f64::from(*v) * f64::from(*v)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbedError::ZeroVector);
        }
        Ok(Self {
            values: values.into_iter().map(|v| (f64::from(v) / norm) as f32).collect(),
        })
    }

    /// Accepts a vector that is already unit-norm within [`NORM_TOLERANCE`], as-is.
    pub fn from_unit(values: Vec<f32>) -> Result<Self, EmbedError> {
        let v = Self { values };
        if v.values.is_empty() || (v.norm() - 1.0).abs() > NORM_TOLERANCE {
            return Err(EmbedError::ZeroVector);
        }
        Ok(v)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| f64::from(*v) * f64::from(*v)).sum::<f64>().sqrt()
    }

    /// Dot product accumulated in f64. Callers guarantee equal dimensions.
    pub fn dot(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| f64::from(*a) * f64::from(*b))
            .sum()
    }
}

impl<'de> Deserialize<'de> for EmbeddingVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<f32>::deserialize(deserializer)?;
        EmbeddingVector::from_unit(values).map_err(serde::de::Error::custom)
    }
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(a.dot(b).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderProvider {
    Remote,
    LocalHash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub provider: EmbedderProvider,
    #[serde(default)]
    pub model_id: String,
    #[serde(default)]
    pub base_url: String,
    #[serde(default)]
    pub api_key: Option<Secret>,
    pub dim: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            provider: EmbedderProvider::Remote,
            model_id: DEFAULT_REMOTE_MODEL.into(),
            base_url: DEFAULT_BASE_URL.into(),
            api_key: None,
            dim: REMOTE_DIM,
        }
    }
}

impl EmbedderConfig {
    pub fn local_hash(dim: usize) -> Self {
        Self {
            provider: EmbedderProvider::LocalHash,
            model_id: String::new(),
            base_url: String::new(),
            api_key: None,
            dim,
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        match self.provider {
            EmbedderProvider::LocalHash if self.dim < 2 => {
                Err(EmbedError::InvalidConfig("local_hash dim must be at least 2".into()))
            }
            EmbedderProvider::LocalHash => Ok(()),
            EmbedderProvider::Remote => {
                if self.dim == 0 {
                    return Err(EmbedError::InvalidConfig("dim must be positive".into()));
                }
                if self.model_id.trim().is_empty() || self.base_url.trim().is_empty() {
                    return Err(EmbedError::InvalidConfig("remote provider needs model_id and base_url".into()));
                }
                if self.api_key.as_ref().is_none_or(Secret::is_empty) {
                    return Err(EmbedError::InvalidConfig("remote provider needs an api_key".into()));
                }
                Ok(())
            }
        }
    }

    /// Identifier recorded in a store manifest; stores built by different embedders
    /// are not interchangeable.
    pub fn embedder_id(&self) -> String {
        match self.provider {
            EmbedderProvider::LocalHash => format!("local_hash/{}", self.dim),
            EmbedderProvider::Remote => format!("remote:{}/{}", self.model_id, self.dim),
        }
    }

    pub fn build(&self, transport: Arc<dyn Transport>) -> Result<Arc<dyn Embedder>, EmbedError> {
        self.validate()?;
        Ok(match self.provider {
            EmbedderProvider::LocalHash => Arc::new(HashEmbedder::new(self.dim)),
            EmbedderProvider::Remote => Arc::new(RemoteEmbedder::new(
                transport,
                self.base_url.clone(),
                self.model_id.clone(),
                self.api_key.clone().unwrap_or_default(),
                self.dim,
            )),
        })
    }
}

pub trait Embedder: Send + Sync {
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    /// One unit vector per input, in input order. Inputs are already known to be nonblank.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

/// Embeds `texts` after rejecting blank inputs.
pub fn embed_texts(embedder: &dyn Embedder, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
    if let Some(index) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(EmbedError::EmptyText { index });
    }
    let vectors = embedder.embed_batch(texts)?;
    if vectors.len() != texts.len() {
        return Err(EmbedError::Provider(format!(
            "expected {} vectors, got {}",
            texts.len(),
            vectors.len()
        )));
    }
    for v in &vectors {
        if v.dim() != embedder.dim() {
            return Err(EmbedError::DimMismatch {
                expected: embedder.dim(),
                got: v.dim(),
            });
        }
    }
    Ok(vectors)
}
