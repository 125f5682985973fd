//! On-disk format.
//!
//! `manifest.json` holds the [`StoreManifest`]. `records.jsonl` holds one JSON object per
//! record, with vector components written to 9 significant digits (exact for f32),
//! followed by a final `{"crc32":"xxxxxxxx"}` line over every preceding byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::{StoreError, StoreManifest, VectorRecord, VectorStore, FORMAT_VERSION};
use crate::chunker::Chunk;
use crate::embedder::EmbeddingVector;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";

#[derive(Serialize)]
struct RecordLineOut<'a> {
    record_id: &'a str,
    doc_id: &'a str,
    seq: usize,
    text: &'a str,
    span: [usize; 2],
    metadata: &'a BTreeMap<String, String>,
    vector: Box<RawValue>,
}

#[derive(Deserialize)]
struct RecordLineIn {
    record_id: String,
    doc_id: String,
    seq: usize,
    text: String,
    span: [usize; 2],
    metadata: BTreeMap<String, String>,
    vector: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct ChecksumLine {
    crc32: String,
}

fn format_vector(values: &[f32]) -> String {
    let mut out = String::with_capacity(values.len() * 16 + 2);
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v:.8e}");
    }
    out.push(']');
    out
}

pub(super) fn encode_records(records: &[VectorRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        let line = RecordLineOut {
            record_id: &r.record_id,
            doc_id: &r.chunk.doc_id,
            seq: r.chunk.seq,
            text: &r.chunk.text,
            span: [r.chunk.span.0, r.chunk.span.1],
            metadata: &r.metadata,
            vector: RawValue::from_string(format_vector(r.vector.values())).expect("formatted floats are valid JSON"),
        };
        serde_json::to_writer(&mut out, &line).expect("record serialization cannot fail");
        out.push(b'\n');
    }
    out
}

fn write_atomically(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Writes `store` into `dir`, replacing any previous contents.
pub fn persist(store: &VectorStore, dir: &Path) -> Result<(), StoreError> {
    fs::create_dir_all(dir)?;
    let mut records = encode_records(store.records());
    let crc = crc32fast::hash(&records);
    serde_json::to_writer(&mut records, &ChecksumLine { crc32: format!("{crc:08x}") })
        .map_err(|e| StoreError::Io(std::io::Error::other(e)))?;
    records.push(b'\n');
    write_atomically(&dir.join(RECORDS_FILE), &records)?;
    let manifest = serde_json::to_vec_pretty(store.manifest()).map_err(|e| StoreError::Io(std::io::Error::other(e)))?;
    write_atomically(&dir.join(MANIFEST_FILE), &manifest)?;
    tracing::debug!(records = store.len(), dir = %dir.display(), "persisted vector store");
    Ok(())
}

pub fn load(dir: &Path) -> Result<VectorStore, StoreError> {
    let manifest_bytes = fs::read(dir.join(MANIFEST_FILE))?;
    let raw: serde_json::Value =
        serde_json::from_slice(&manifest_bytes).map_err(|e| StoreError::CorruptStore(format!("manifest: {e}")))?;
    let found = raw.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != FORMAT_VERSION {
        return Err(StoreError::FormatVersionMismatch {
            found,
            expected: FORMAT_VERSION,
        });
    }
    let manifest: StoreManifest =
        serde_json::from_value(raw).map_err(|e| StoreError::CorruptStore(format!("manifest: {e}")))?;

    let bytes = fs::read(dir.join(RECORDS_FILE))?;
    let body = bytes
        .strip_suffix(b"\n")
        .ok_or_else(|| StoreError::CorruptStore("records file is truncated".into()))?;
    let split = body.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    let (payload, checksum_line) = body.split_at(split);
    let checksum: ChecksumLine = serde_json::from_slice(checksum_line)
        .map_err(|_| StoreError::CorruptStore("missing checksum line".into()))?;
    let actual = format!("{:08x}", crc32fast::hash(payload));
    if checksum.crc32 != actual {
        return Err(StoreError::CorruptStore(format!(
            "checksum mismatch (recorded {}, computed {actual})",
            checksum.crc32
        )));
    }

    let mut records = Vec::with_capacity(manifest.record_count);
    for (n, line) in payload.split(|b| *b == b'\n').filter(|l| !l.is_empty()).enumerate() {
        let parsed: RecordLineIn =
            serde_json::from_slice(line).map_err(|e| StoreError::CorruptStore(format!("record line {}: {e}", n + 1)))?;
        let vector = EmbeddingVector::from_unit(parsed.vector)
            .map_err(|_| StoreError::CorruptStore(format!("record {} is not unit-norm", parsed.record_id)))?;
        records.push(VectorRecord {
            record_id: parsed.record_id,
            chunk: Chunk {
                doc_id: parsed.doc_id,
                seq: parsed.seq,
                text: parsed.text,
                span: (parsed.span[0], parsed.span[1]),
            },
            vector,
            metadata: parsed.metadata,
        });
    }
    if records.len() != manifest.record_count {
        return Err(StoreError::CorruptStore(format!(
            "manifest lists {} records, file holds {}",
            manifest.record_count,
            records.len()
        )));
    }
    VectorStore::from_parts(manifest, records)
}
