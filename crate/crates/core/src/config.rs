//! Pipeline configuration and partial updates.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::chunker::ChunkParams;
use crate::embedder::{EmbedderConfig, EmbedderProvider, DEFAULT_LOCAL_DIM};
use crate::generator::{GenConfig, GenProvider};
use crate::retriever::RetrievalConfig;
use crate::secret::Secret;
use crate::zotero::LibraryType;

/// Model ids offered to clients. Any other id is still accepted.
pub const AVAILABLE_MODELS: &[&str] = &["gpt-4", "gpt-3.5-turbo"];

#[derive(Debug, Error)]
#[error("invalid config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ZoteroSettings {
    pub api_key: Option<Secret>,
    pub library_type: LibraryType,
    pub library_id: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub zotero: ZoteroSettings,
    pub chunking: ChunkParams,
    pub embedder: EmbedderConfig,
    pub retrieval: RetrievalConfig,
    pub generation: GenConfig,
}

impl PipelineConfig {
    /// Offline providers: hash embeddings and the scripted chat mock.
    pub fn use_mock_providers(&mut self) {
        self.embedder = EmbedderConfig::local_hash(DEFAULT_LOCAL_DIM);
        self.generation.provider = GenProvider::ScriptedMock;
    }

    /// Structural checks. Missing API keys are not errors here because the
    /// environment may still supply them.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.chunking.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.retrieval.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.generation.validate().map_err(|e| ConfigError(e.to_string()))?;
        let e = &self.embedder;
        match e.provider {
            EmbedderProvider::LocalHash if e.dim < 2 => Err(ConfigError("embedder dim must be at least 2".into())),
            EmbedderProvider::Remote if e.dim == 0 || e.model_id.trim().is_empty() => {
                Err(ConfigError("remote embedder needs a model_id and a positive dim".into()))
            }
            _ => Ok(()),
        }
    }

    /// Applies a full or partial JSON document on top of `self`.
    ///
    /// Objects merge key by key; everything else replaces. A secret sent back as the
    /// redaction placeholder keeps its current value.
    pub fn merged(&self, patch: &Value) -> Result<PipelineConfig, ConfigError> {
        if !patch.is_object() {
            return Err(ConfigError("config update must be a JSON object".into()));
        }
        let mut doc = serde_json::to_value(self).map_err(|e| ConfigError(e.to_string()))?;
        merge_value(&mut doc, patch);
        let mut next: PipelineConfig = serde_json::from_value(doc).map_err(|e| ConfigError(e.to_string()))?;
        keep_secret(&mut next.zotero.api_key, &self.zotero.api_key);
        keep_secret(&mut next.embedder.api_key, &self.embedder.api_key);
        keep_secret(&mut next.generation.api_key, &self.generation.api_key);
        next.validate()?;
        Ok(next)
    }
}

fn keep_secret(next: &mut Option<Secret>, old: &Option<Secret>) {
    if next.as_ref().is_some_and(Secret::is_placeholder) {
        *next = old.clone();
    }
}

fn merge_value(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(base), Value::Object(patch)) => {
            for (k, v) in patch {
                match base.get_mut(k) {
                    Some(slot) => merge_value(slot, v),
                    None => {
                        base.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retriever::SearchType;
    use serde_json::json;

    #[test]
    fn defaults_match_reference_run() {
        let c = PipelineConfig::default();
        assert_eq!((c.chunking.chunk_size, c.chunking.chunk_overlap), (500, 200));
        assert_eq!(c.retrieval.k, 7);
        assert_eq!(c.retrieval.search_type, SearchType::Mmr);
        assert_eq!(c.generation.model_id, "gpt-4");
        assert_eq!(c.generation.max_tokens, 4000);
        assert_eq!(c.zotero.library_type, LibraryType::Group);
        c.validate().unwrap();
    }

    #[test]
    fn partial_merge() {
        let c = PipelineConfig::default();
        let next = c
            .merged(&json!({"chunking": {"chunk_size": 400, "chunk_overlap": 100}, "retrieval": {"k": 3}}))
            .unwrap();
        assert_eq!((next.chunking.chunk_size, next.chunking.chunk_overlap), (400, 100));
        assert_eq!(next.chunking.separators, c.chunking.separators);
        assert_eq!(next.retrieval.k, 3);
        assert_eq!(next.retrieval.fetch_k, 20);
        assert_eq!(next.generation, c.generation);
    }

    #[test]
    fn invalid_merge_rejected() {
        let c = PipelineConfig::default();
        assert!(c.merged(&json!({"chunking": {"chunk_overlap": 500}})).is_err());
        assert!(c.merged(&json!({"retrieval": {"search_type": "nearest"}})).is_err());
        assert!(c.merged(&json!([1, 2])).is_err());
    }

    #[test]
    fn placeholder_keeps_secret() {
        let mut c = PipelineConfig::default();
        c.generation.api_key = Some(Secret::new("sk-live"));
        let echoed = serde_json::to_value(&c).unwrap();
        assert_eq!(echoed["generation"]["api_key"], "***");
        let next = c.merged(&echoed).unwrap();
        assert_eq!(next.generation.api_key.unwrap().expose(), "sk-live");
        let next = c.merged(&json!({"generation": {"api_key": "sk-new"}})).unwrap();
        assert_eq!(next.generation.api_key.unwrap().expose(), "sk-new");
    }
}
