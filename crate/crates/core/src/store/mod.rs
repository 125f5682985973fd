//! Local vector store with exact search.
//!
//! Records live in memory and persist to a directory holding `manifest.json` and
//! `records.jsonl`. Searches are linear scans; scores are cosine similarities (higher is
//! better) and ties always go to the smaller `record_id`.

mod mmr;
mod persist;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use parking_lot::{RwLock, RwLockReadGuard, RwLockWriteGuard};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::Chunk;
use crate::embedder::EmbeddingVector;

pub use mmr::mmr_select;
pub use persist::{load, persist, MANIFEST_FILE, RECORDS_FILE};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_FETCH_K: usize = 20;
pub const DEFAULT_MMR_LAMBDA: f64 = 0.5;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("dimension mismatch: store holds {expected}-dimensional vectors, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("record id {0:?} already exists")]
    DuplicateId(String),
    #[error("invalid search parameter: {0}")]
    InvalidParam(String),
    #[error("store format version {found} is not supported (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("store is corrupt: {0}")]
    CorruptStore(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorRecord {
    pub record_id: String,
    pub chunk: Chunk,
    pub vector: EmbeddingVector,
    pub metadata: BTreeMap<String, String>,
}

impl VectorRecord {
    pub fn new(chunk: Chunk, vector: EmbeddingVector, metadata: BTreeMap<String, String>) -> Self {
        Self {
            record_id: chunk.record_id(),
            chunk,
            vector,
            metadata,
        }
    }

    pub fn filename(&self) -> &str {
        self.metadata.get("filename").map_or("", String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub format_version: u32,
    pub dim: usize,
    pub embedder_id: String,
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    pub record_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub record: VectorRecord,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    manifest: StoreManifest,
    records: Vec<VectorRecord>,
    ids: HashMap<String, usize>,
}

impl VectorStore {
    pub fn new(dim: usize, embedder_id: impl Into<String>, chunk_size: usize, chunk_overlap: usize) -> Self {
        Self {
            manifest: StoreManifest {
                format_version: FORMAT_VERSION,
                dim,
                embedder_id: embedder_id.into(),
                chunk_size,
                chunk_overlap,
                record_count: 0,
            },
            records: Vec::new(),
            ids: HashMap::new(),
        }
    }

    pub(crate) fn from_parts(manifest: StoreManifest, records: Vec<VectorRecord>) -> Result<Self, StoreError> {
        let mut store = Self {
            manifest: StoreManifest {
                record_count: 0,
                ..manifest
            },
            records: Vec::new(),
            ids: HashMap::new(),
        };
        store.add_records(records).map_err(|e| StoreError::CorruptStore(e.to_string()))?;
        Ok(store)
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn dim(&self) -> usize {
        self.manifest.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[VectorRecord] {
        &self.records
    }

    pub fn get(&self, record_id: &str) -> Option<&VectorRecord> {
        self.ids.get(record_id).map(|&i| &self.records[i])
    }

    /// Appends all records or none. Returns the new record count.
    pub fn add_records(&mut self, records: Vec<VectorRecord>) -> Result<usize, StoreError> {
        let mut batch_ids = HashSet::with_capacity(records.len());
        for r in &records {
            if r.vector.dim() != self.manifest.dim {
                return Err(StoreError::DimMismatch {
                    expected: self.manifest.dim,
                    got: r.vector.dim(),
                });
            }
            if self.ids.contains_key(&r.record_id) || !batch_ids.insert(r.record_id.as_str()) {
                return Err(StoreError::DuplicateId(r.record_id.clone()));
            }
        }
        for r in records {
            self.ids.insert(r.record_id.clone(), self.records.len());
            self.records.push(r);
        }
        self.manifest.record_count = self.records.len();
        Ok(self.records.len())
    }

    /// Removes every record of `doc_id` and appends `records`, atomically.
    pub fn replace_document(&mut self, doc_id: &str, records: Vec<VectorRecord>) -> Result<usize, StoreError> {
        let mut next = self.clone();
        next.records.retain(|r| r.chunk.doc_id != doc_id);
        next.ids = next
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.record_id.clone(), i))
            .collect();
        next.manifest.record_count = next.records.len();
        next.add_records(records)?;
        *self = next;
        Ok(self.records.len())
    }

    fn check_query(&self, q: &EmbeddingVector, k: usize) -> Result<(), StoreError> {
        if q.dim() != self.manifest.dim {
            return Err(StoreError::DimMismatch {
                expected: self.manifest.dim,
                got: q.dim(),
            });
        }
        if k == 0 {
            return Err(StoreError::InvalidParam("k must be positive".into()));
        }
        Ok(())
    }

    fn by_score_then_id(&self, a: &(usize, f64), b: &(usize, f64)) -> Ordering {
        b.1.total_cmp(&a.1)
            .then_with(|| self.records[a.0].record_id.cmp(&self.records[b.0].record_id))
    }

    /// Top `n` record indices with their scores, best first.
    fn ranked(&self, q: &EmbeddingVector, n: usize) -> Vec<(usize, f64)> {
        let mut scored: Vec<(usize, f64)> = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (i, q.dot(&r.vector).clamp(-1.0, 1.0)))
            .collect();
        let n = n.min(scored.len());
        if n == 0 {
            return Vec::new();
        }
        if n < scored.len() {
            scored.select_nth_unstable_by(n - 1, |a, b| self.by_score_then_id(a, b));
            scored.truncate(n);
        }
        scored.sort_unstable_by(|a, b| self.by_score_then_id(a, b));
        scored
    }

    fn hit(&self, (i, score): (usize, f64)) -> ScoredHit {
        ScoredHit {
            record: self.records[i].clone(),
            score,
        }
    }

    /// Exact top-`k` by cosine similarity.
    pub fn similarity_search(&self, q: &EmbeddingVector, k: usize) -> Result<Vec<ScoredHit>, StoreError> {
        self.check_query(q, k)?;
        Ok(self.ranked(q, k).into_iter().map(|h| self.hit(h)).collect())
    }

    /// MMR over the top-`fetch_k` candidates. Hits carry their query similarity and are
    /// listed in selection order.
    pub fn mmr_search(
        &self,
        q: &EmbeddingVector,
        k: usize,
        fetch_k: usize,
        lambda: f64,
    ) -> Result<Vec<ScoredHit>, StoreError> {
        self.check_query(q, k)?;
        if !(0.0..=1.0).contains(&lambda) {
            return Err(StoreError::InvalidParam(format!("lambda {lambda} is outside [0, 1]")));
        }
        if fetch_k < k {
            return Err(StoreError::InvalidParam(format!("fetch_k ({fetch_k}) must be at least k ({k})")));
        }
        let pool = self.ranked(q, fetch_k);
        let query_sim: Vec<f64> = pool.iter().map(|&(_, s)| s).collect();
        let ids: Vec<&str> = pool.iter().map(|&(i, _)| self.records[i].record_id.as_str()).collect();
        let pair = |a: usize, b: usize| {
            self.records[pool[a].0]
                .vector
                .dot(&self.records[pool[b].0].vector)
                .clamp(-1.0, 1.0)
        };
        Ok(mmr_select(&query_sim, &ids, pair, k, lambda)
            .into_iter()
            .map(|p| self.hit(pool[p]))
            .collect())
    }

    /// `similarity_search(q, k)` restricted to hits scoring at least `threshold`.
    pub fn threshold_search(&self, q: &EmbeddingVector, k: usize, threshold: f64) -> Result<Vec<ScoredHit>, StoreError> {
        let mut hits = self.similarity_search(q, k)?;
        hits.retain(|h| h.score >= threshold);
        Ok(hits)
    }

    /// CRC-32 over the canonical serialization; equal for equal contents.
    pub fn fingerprint(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&serde_json::to_vec(&self.manifest).unwrap_or_default());
        hasher.update(&persist::encode_records(&self.records));
        hasher.finalize()
    }
}

/// Single-writer / multi-reader gate around a [`VectorStore`].
#[derive(Debug)]
pub struct StoreHandle {
    inner: RwLock<VectorStore>,
}

impl StoreHandle {
    pub fn new(store: VectorStore) -> Self {
        Self {
            inner: RwLock::new(store),
        }
    }

    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        Ok(Self::new(load(dir)?))
    }

    pub fn read(&self) -> RwLockReadGuard<'_, VectorStore> {
        self.inner.read()
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, VectorStore> {
        self.inner.write()
    }

    pub fn add_records(&self, records: Vec<VectorRecord>) -> Result<usize, StoreError> {
        self.inner.write().add_records(records)
    }

    pub fn persist(&self, dir: &Path) -> Result<(), StoreError> {
        let guard = self.inner.write();
        persist(&guard, dir)
    }

    pub fn manifest(&self) -> StoreManifest {
        self.inner.read().manifest().clone()
    }
}
