//! Question → embedded query → store search → contextual compression.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedder::{cosine_similarity, embed_texts, EmbedError, Embedder, EmbeddingVector};
use crate::store::{ScoredHit, StoreError, VectorStore, DEFAULT_FETCH_K, DEFAULT_MMR_LAMBDA};

pub const DEFAULT_K: usize = 7;
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MIN_QUERY_SIMILARITY: f64 = 0.3;
pub const DEFAULT_REDUNDANCY_CEILING: f64 = 0.95;

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error("embedding the question failed: {0}")]
    Embedding(#[from] EmbedError),
    #[error("vector store: {0}")]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SearchType {
    Similarity,
    #[default]
    Mmr,
    SimilarityScoreThreshold,
}

impl std::str::FromStr for SearchType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "similarity" => Ok(SearchType::Similarity),
            "mmr" => Ok(SearchType::Mmr),
            "similarity_score_threshold" => Ok(SearchType::SimilarityScoreThreshold),
            other => Err(format!(
                "unknown search type {other:?} (expected similarity, mmr or similarity_score_threshold)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompressionConfig {
    pub enabled: bool,
    pub min_query_similarity: f64,
    pub redundancy_ceiling: f64,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            min_query_similarity: DEFAULT_MIN_QUERY_SIMILARITY,
            redundancy_ceiling: DEFAULT_REDUNDANCY_CEILING,
        }
    }
}

impl CompressionConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub search_type: SearchType,
    pub k: usize,
    pub fetch_k: usize,
    pub lambda: f64,
    pub score_threshold: f64,
    pub compression: CompressionConfig,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            search_type: SearchType::Mmr,
            k: DEFAULT_K,
            fetch_k: DEFAULT_FETCH_K,
            lambda: DEFAULT_MMR_LAMBDA,
            score_threshold: DEFAULT_SCORE_THRESHOLD,
            compression: CompressionConfig::default(),
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrieveError> {
        let bad = |m: String| Err(RetrieveError::InvalidConfig(m));
        if self.k == 0 {
            return bad("k must be positive".into());
        }
        if self.k > self.fetch_k {
            return bad(format!("k ({}) must not exceed fetch_k ({})", self.k, self.fetch_k));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} is outside [0, 1]", self.lambda));
        }
        let c = &self.compression;
        for (name, v) in [
            ("score_threshold", self.score_threshold),
            ("min_query_similarity", c.min_query_similarity),
            ("redundancy_ceiling", c.redundancy_ceiling),
        ] {
            if !(-1.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} is outside [-1, 1]"));
            }
        }
        if c.redundancy_ceiling <= c.min_query_similarity {
            return bad("redundancy_ceiling must be greater than min_query_similarity".into());
        }
        Ok(())
    }

    /// Sets `k`, raising `fetch_k` when needed so the pair stays valid.
    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self.fetch_k = self.fetch_k.max(k);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    BelowThreshold,
    Redundant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedHit {
    pub record_id: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub hits: Vec<ScoredHit>,
    pub dropped: Vec<DroppedHit>,
}

/// Runs the configured search without compression.
pub fn search(store: &VectorStore, q: &EmbeddingVector, cfg: &RetrievalConfig) -> Result<Vec<ScoredHit>, RetrieveError> {
    Ok(match cfg.search_type {
        SearchType::Similarity => store.similarity_search(q, cfg.k)?,
        SearchType::Mmr => store.mmr_search(q, cfg.k, cfg.fetch_k, cfg.lambda)?,
        SearchType::SimilarityScoreThreshold => store.threshold_search(q, cfg.k, cfg.score_threshold)?,
    })
}

pub fn retrieve(
    question: &str,
    cfg: &RetrievalConfig,
    store: &VectorStore,
    embedder: &dyn Embedder,
) -> Result<RetrievalResult, RetrieveError> {
    let question = question.trim();
    if question.is_empty() {
        return Err(RetrieveError::EmptyQuestion);
    }
    cfg.validate()?;
    if store.is_empty() {
        return Ok(RetrievalResult::default());
    }
    let q = embed_texts(embedder, &[question.to_string()])?
        .pop()
        .ok_or_else(|| EmbedError::Provider("no vector returned for the question".into()))?;
    let hits = search(store, &q, cfg)?;
    compress(&q, hits, &cfg.compression)
}

/// Relevance filter followed by redundancy filter. Survivors keep their order.
pub fn compress(
    _question: &EmbeddingVector,
    hits: Vec<ScoredHit>,
    cfg: &CompressionConfig,
) -> Result<RetrievalResult, RetrieveError> {
    if !cfg.enabled {
        return Ok(RetrievalResult { hits, dropped: Vec::new() });
    }
    let mut kept: Vec<ScoredHit> = Vec::with_capacity(hits.len());
    let mut dropped = Vec::new();
    for hit in hits {
        if hit.score < cfg.min_query_similarity {
            dropped.push(DroppedHit {
                record_id: hit.record.record_id.clone(),
                reason: DropReason::BelowThreshold,
            });
            continue;
        }
        let mut redundant = false;
        for k in &kept {
            if cosine_similarity(&k.record.vector, &hit.record.vector)? > cfg.redundancy_ceiling {
                redundant = true;
                break;
            }
        }
        if redundant {
            dropped.push(DroppedHit {
                record_id: hit.record.record_id.clone(),
                reason: DropReason::Redundant,
            });
        } else {
            kept.push(hit);
        }
    }
    Ok(RetrievalResult { hits: kept, dropped })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::chunker::Chunk;
    use crate::embedder::HashEmbedder;
    use crate::store::VectorRecord;

    fn unit(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector::normalized(v.to_vec()).unwrap()
    }

    fn hit(id: &str, v: &[f32], score: f64) -> ScoredHit {
        let chunk = Chunk {
            doc_id: id.into(),
            seq: 0,
            text: id.into(),
            span: (0, id.len()),
        };
        ScoredHit {
            record: VectorRecord::new(chunk, unit(v), BTreeMap::new()),
            score,
        }
    }

    fn text_store(texts: &[&str]) -> (VectorStore, HashEmbedder) {
        let e = HashEmbedder::new(64);
        let mut s = VectorStore::new(64, e.id(), 500, 200);
        let records = texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let chunk = Chunk {
                    doc_id: format!("d{i}"),
                    seq: 0,
                    text: t.to_string(),
                    span: (0, t.chars().count()),
                };
                let v = embed_texts(&e, &[t.to_string()]).unwrap().pop().unwrap();
                VectorRecord::new(chunk, v, BTreeMap::new())
            })
            .collect();
        s.add_records(records).unwrap();
        (s, e)
    }

    #[test]
    fn defaults() {
        let c = RetrievalConfig::default();
        assert_eq!(c.search_type, SearchType::Mmr);
        assert_eq!((c.k, c.fetch_k), (7, 20));
        assert!(c.compression.enabled);
        assert_eq!(c.compression.min_query_similarity, 0.3);
        assert_eq!(c.compression.redundancy_ceiling, 0.95);
        c.validate().unwrap();
    }

    #[test]
    fn validation() {
        let base = RetrievalConfig::default();
        assert!(RetrievalConfig { k: 0, ..base.clone() }.validate().is_err());
        assert!(RetrievalConfig { k: 21, ..base.clone() }.validate().is_err());
        assert!(base.clone().with_k(21).validate().is_ok());
        assert!(RetrievalConfig { lambda: 1.5, ..base.clone() }.validate().is_err());
        let mut c = base.clone();
        c.compression.redundancy_ceiling = 0.2;
        assert!(c.validate().is_err());
        assert_eq!(serde_json::to_value(SearchType::SimilarityScoreThreshold).unwrap(), "similarity_score_threshold");
        assert_eq!("mmr".parse::<SearchType>().unwrap(), SearchType::Mmr);
    }

    #[test]
    fn compress_disabled_is_identity() {
        let q = unit(&[1.0, 0.0]);
        let hits = vec![hit("a", &[1.0, 0.0], 0.1), hit("b", &[1.0, 0.0], 0.1)];
        let out = compress(&q, hits.clone(), &CompressionConfig::disabled()).unwrap();
        assert_eq!(out.hits, hits);
        assert!(out.dropped.is_empty());
    }

    #[test]
    fn compress_relevance_filter() {
        let q = unit(&[1.0, 0.0]);
        let hits = vec![hit("a", &[1.0, 0.0], 0.8), hit("b", &[0.0, 1.0], 0.1)];
        let out = compress(&q, hits, &CompressionConfig::default()).unwrap();
        assert_eq!(out.hits.len(), 1);
        assert_eq!(out.hits[0].record.record_id, "a:0");
        assert_eq!(
            out.dropped,
            vec![DroppedHit {
                record_id: "b:0".into(),
                reason: DropReason::BelowThreshold
            }]
        );
    }

    #[test]
    fn compress_redundancy_filter() {
        let q = unit(&[1.0, 0.0]);
        let hits = vec![hit("a", &[1.0, 1.0], 0.7), hit("b", &[1.0, 1.0], 0.7)];
        let out = compress(&q, hits, &CompressionConfig::default()).unwrap();
        assert_eq!(out.hits.len(), 1);
        assert_eq!(out.dropped[0].reason, DropReason::Redundant);
        assert_eq!(out.dropped[0].record_id, "b:0");
    }

    #[test]
    fn default_config_on_small_store() {
        let (s, e) = text_store(&["red cells sickle", "hemoglobin polymer", "newborn screening"]);
        let out = retrieve("sickle red cells", &RetrievalConfig::default(), &s, &e).unwrap();
        assert!(out.hits.len() <= 3);
    }

    #[test]
    fn empty_store_and_question() {
        let e = HashEmbedder::new(64);
        let s = VectorStore::new(64, e.id(), 500, 200);
        assert!(retrieve("anything", &RetrievalConfig::default(), &s, &e).unwrap().hits.is_empty());
        assert!(matches!(
            retrieve("   ", &RetrievalConfig::default(), &s, &e),
            Err(RetrieveError::EmptyQuestion)
        ));
    }

    #[test]
    fn similarity_without_compression_is_pass_through() {
        let (s, e) = text_store(&["alpha beta", "beta gamma", "gamma delta", "alpha alpha"]);
        let cfg = RetrievalConfig {
            search_type: SearchType::Similarity,
            k: 3,
            compression: CompressionConfig::disabled(),
            ..RetrievalConfig::default()
        };
        let q = embed_texts(&e, &["alpha".to_string()]).unwrap().pop().unwrap();
        let out = retrieve("alpha", &cfg, &s, &e).unwrap();
        assert_eq!(out.hits, s.similarity_search(&q, 3).unwrap());
    }

    #[test]
    fn mmr_skips_verbatim_duplicate() {
        // d0 and d1 are identical; d2 shares one query token. With lambda 0.5 the
        // second copy scores 0.5*s - 0.5*1 which loses to d2's 0.5*s2 - 0.5*sim(d2,d0).
        let (s, e) = text_store(&[
            "sickle hemoglobin polymer",
            "sickle hemoglobin polymer",
            "hemoglobin electrophoresis screening",
        ]);
        let cfg = RetrievalConfig {
            k: 2,
            compression: CompressionConfig::disabled(),
            ..RetrievalConfig::default()
        };
        let out = retrieve("sickle hemoglobin", &cfg, &s, &e).unwrap();
        let ids: Vec<_> = out.hits.iter().map(|h| h.record.record_id.as_str()).collect();
        assert_eq!(ids, ["d0:0", "d2:0"]);
    }
}
