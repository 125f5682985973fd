//! Document registration and the fetch → extract → chunk → embed → index job.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::{chunk_document, ChunkError, ChunkParams};
use crate::embedder::{embed_texts, EmbedError, Embedder};
use crate::pdf::{self, PdfError};
use crate::store::{persist, StoreError, VectorRecord, VectorStore};
use crate::zotero::{local_file_name, AttachmentRef, LibraryConfig, ZoteroClient, ZoteroError};

/// Attachment list saved next to the downloads so a rebuild can run without Zotero.
pub const CATALOG_FILE: &str = "catalog.json";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("document {0:?} is already registered")]
    DuplicateDocument(String),
    #[error("document {0:?} has no text")]
    EmptyText(String),
    #[error("zotero: {0}")]
    Zotero(#[from] ZoteroError),
    #[error("embedding provider: {0}")]
    Embedding(#[from] EmbedError),
    #[error("vector store: {0}")]
    Store(#[from] StoreError),
    #[error("chunking: {0}")]
    Chunking(#[from] ChunkError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog error: {0}")]
    Catalog(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub doc_id: String,
    pub filename: String,
    pub title: String,
    pub text: String,
    pub page_count: usize,
}

/// Registered documents, unique by `doc_id`, in registration order.
#[derive(Debug, Default, Clone)]
pub struct Corpus {
    docs: Vec<SourceDocument>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&SourceDocument> {
        self.index.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn documents(&self) -> &[SourceDocument] {
        &self.docs
    }

    /// Registers extracted text under the attachment's item key. With `replace`, an
    /// existing document of the same id is overwritten in place.
    pub fn register_document(
        &mut self,
        attachment: &AttachmentRef,
        text: String,
        page_count: usize,
        replace: bool,
    ) -> Result<&SourceDocument, IngestError> {
        if text.trim().is_empty() {
            return Err(IngestError::EmptyText(attachment.item_key.clone()));
        }
        let doc = SourceDocument {
            doc_id: attachment.item_key.clone(),
            filename: attachment.filename.clone(),
            title: attachment.title.clone(),
            text,
            page_count,
        };
        let slot = match self.index.get(&doc.doc_id) {
            Some(_) if !replace => return Err(IngestError::DuplicateDocument(doc.doc_id)),
            Some(&i) => {
                self.docs[i] = doc;
                i
            }
            None => {
                self.index.insert(doc.doc_id.clone(), self.docs.len());
                self.docs.push(doc);
                self.docs.len() - 1
            }
        };
        Ok(&self.docs[slot])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestStatus {
    Pending,
    Running,
    Done,
    Failed,
}

impl IngestStatus {
    pub fn can_become(self, next: IngestStatus) -> bool {
        matches!(
            (self, next),
            (IngestStatus::Pending, IngestStatus::Running)
                | (IngestStatus::Running, IngestStatus::Done)
                | (IngestStatus::Running, IngestStatus::Failed)
        )
    }

    pub fn is_finished(self) -> bool {
        matches!(self, IngestStatus::Done | IngestStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedDocument {
    pub doc_id: String,
    pub filename: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub job_id: String,
    pub status: IngestStatus,
    pub documents_ingested: usize,
    pub documents_skipped: usize,
    pub skipped: Vec<SkippedDocument>,
    pub non_pdf_attachments_skipped: usize,
    pub chunks_created: usize,
    pub records_indexed: usize,
    pub embedding_errors: usize,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    pub error: Option<String>,
}

impl IngestReport {
    pub fn new(job_id: impl Into<String>) -> Self {
        Self {
            job_id: job_id.into(),
            status: IngestStatus::Pending,
            documents_ingested: 0,
            documents_skipped: 0,
            skipped: Vec::new(),
            non_pdf_attachments_skipped: 0,
            chunks_created: 0,
            records_indexed: 0,
            embedding_errors: 0,
            started_at: None,
            finished_at: None,
            error: None,
        }
    }

    fn transition(&mut self, next: IngestStatus) {
        debug_assert!(self.status.can_become(next), "{:?} -> {:?}", self.status, next);
        if self.status.can_become(next) {
            self.status = next;
            match next {
                IngestStatus::Running => self.started_at = Some(Utc::now()),
                IngestStatus::Done | IngestStatus::Failed => self.finished_at = Some(Utc::now()),
                IngestStatus::Pending => {}
            }
        }
    }

    fn skip(&mut self, attachment: &AttachmentRef, reason: impl Into<String>) {
        let reason = reason.into();
        tracing::warn!(doc_id = %attachment.item_key, %reason, "skipping document");
        self.documents_skipped += 1;
        self.skipped.push(SkippedDocument {
            doc_id: attachment.item_key.clone(),
            filename: attachment.filename.clone(),
            reason,
        });
    }
}

/// Where the job gets its PDFs.
#[derive(Clone)]
pub enum IngestSource {
    /// List the library and download every PDF attachment.
    Zotero { client: ZoteroClient, library: LibraryConfig },
    /// Re-use previously downloaded files described by the saved catalog.
    Local { catalog: Vec<AttachmentRef> },
}

#[derive(Clone)]
pub struct IngestRequest {
    pub source: IngestSource,
    /// `{data_dir}/pdfs`
    pub pdf_dir: PathBuf,
    /// `{data_dir}/index`; the finished store is persisted here when set.
    pub index_dir: Option<PathBuf>,
    pub chunking: ChunkParams,
    pub embedder: Arc<dyn Embedder>,
}

pub fn save_catalog(pdf_dir: &Path, catalog: &[AttachmentRef]) -> Result<(), IngestError> {
    fs::create_dir_all(pdf_dir)?;
    let json = serde_json::to_vec_pretty(catalog).map_err(|e| IngestError::Catalog(e.to_string()))?;
    fs::write(pdf_dir.join(CATALOG_FILE), json)?;
    Ok(())
}

pub fn load_catalog(pdf_dir: &Path) -> Result<Vec<AttachmentRef>, IngestError> {
    let bytes = fs::read(pdf_dir.join(CATALOG_FILE))?;
    serde_json::from_slice(&bytes).map_err(|e| IngestError::Catalog(e.to_string()))
}

/// True when a saved catalog exists and every file it lists is present locally.
pub fn local_copy_complete(pdf_dir: &Path) -> bool {
    load_catalog(pdf_dir).is_ok_and(|catalog| catalog.iter().all(|a| pdf_dir.join(local_file_name(a)).is_file()))
}

/// Runs the whole pipeline synchronously, updating `report` as it goes.
///
/// Per-document problems become skips. Listing failures, embedder configuration
/// errors and store errors fail the run.
pub fn run_ingest(request: &IngestRequest, report: &Mutex<IngestReport>) -> Result<VectorStore, IngestError> {
    report.lock().transition(IngestStatus::Running);
    request.chunking.validate()?;

    let attachments = match &request.source {
        IngestSource::Zotero { client, library } => {
            let listing = client.list_attachments(library)?;
            report.lock().non_pdf_attachments_skipped = listing.skipped_non_pdf;
            save_catalog(&request.pdf_dir, &listing.pdfs)?;
            listing.pdfs
        }
        IngestSource::Local { catalog } => catalog.clone(),
    };

    let embedder = request.embedder.as_ref();
    let mut store = VectorStore::new(
        embedder.dim(),
        embedder.id(),
        request.chunking.chunk_size,
        request.chunking.chunk_overlap,
    );
    let mut corpus = Corpus::new();

    for attachment in &attachments {
        let path = match &request.source {
            IngestSource::Zotero { client, library } => {
                match client.download_attachment(library, attachment, &request.pdf_dir) {
                    Ok(path) => path,
                    Err(e) => {
                        report.lock().skip(attachment, format!("DownloadFailed: {e}"));
                        continue;
                    }
                }
            }
            IngestSource::Local { .. } => {
                let path = request.pdf_dir.join(local_file_name(attachment));
                if !path.is_file() {
                    report.lock().skip(attachment, "MissingLocalFile");
                    continue;
                }
                path
            }
        };

        let extracted = match pdf::extract_text(&path) {
            Ok(x) => x,
            Err(e) => {
                let reason = match &e {
                    PdfError::NotAPdf => "NotAPdf".to_string(),
                    PdfError::EmptyDocument => "EmptyDocument".to_string(),
                    PdfError::ExtractionFailed(m) => format!("ExtractionFailed: {m}"),
                    PdfError::Io(m) => format!("IoError: {m}"),
                };
                report.lock().skip(attachment, reason);
                continue;
            }
        };
        let doc = corpus.register_document(attachment, extracted.text, extracted.page_count, true)?;
        let chunks = chunk_document(&doc.doc_id, &doc.text, &request.chunking)?;
        if chunks.is_empty() {
            report.lock().skip(attachment, "EmptyDocument");
            continue;
        }
        report.lock().chunks_created += chunks.len();

        let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
        let vectors = match embed_texts(embedder, &texts) {
            Ok(v) => v,
            Err(e) if e.is_configuration() => return Err(e.into()),
            Err(e) => {
                let mut r = report.lock();
                r.embedding_errors += 1;
                r.skip(attachment, format!("EmbeddingFailed: {e}"));
                continue;
            }
        };
        let mut metadata = BTreeMap::new();
        metadata.insert("filename".to_string(), doc.filename.clone());
        metadata.insert("title".to_string(), doc.title.clone());
        let records: Vec<VectorRecord> = chunks
            .into_iter()
            .zip(vectors)
            .map(|(chunk, vector)| VectorRecord::new(chunk, vector, metadata.clone()))
            .collect();
        let added = records.len();
        store.replace_document(&doc.doc_id, records)?;
        let mut r = report.lock();
        r.records_indexed += added;
        r.documents_ingested += 1;
    }

    if let Some(dir) = &request.index_dir {
        persist(&store, dir)?;
    }
    tracing::info!(records = store.len(), documents = corpus.len(), "ingest finished");
    Ok(store)
}

/// A background ingest run.
pub struct IngestJob {
    pub id: String,
    report: Arc<Mutex<IngestReport>>,
    handle: Mutex<Option<JoinHandle<()>>>,
}

impl IngestJob {
    pub fn report(&self) -> IngestReport {
        self.report.lock().clone()
    }

    pub fn is_finished(&self) -> bool {
        self.report.lock().status.is_finished()
    }

    /// Blocks until the job has finished and returns its final report.
    pub fn wait(&self) -> IngestReport {
        if let Some(handle) = self.handle.lock().take() {
            let _ = handle.join();
        }
        self.report()
    }
}

/// Starts [`run_ingest`] on a new thread.
///
/// `on_complete` sees the outcome before the report turns `done`/`failed`, so a caller
/// that installs the store there is ready by the time pollers see completion.
pub fn spawn_ingest<F>(request: IngestRequest, on_complete: F) -> Arc<IngestJob>
where
    F: FnOnce(&Result<VectorStore, IngestError>) + Send + 'static,
{
    let id = uuid::Uuid::new_v4().to_string();
    let report = Arc::new(Mutex::new(IngestReport::new(id.clone())));
    let job = Arc::new(IngestJob {
        id,
        report: report.clone(),
        handle: Mutex::new(None),
    });
    let handle = std::thread::spawn(move || {
        let outcome = run_ingest(&request, &report);
        on_complete(&outcome);
        let mut r = report.lock();
        match outcome {
            Ok(_) => r.transition(IngestStatus::Done),
            Err(e) => {
                tracing::error!(error = %e, "ingest failed");
                r.error = Some(e.to_string());
                if r.status == IngestStatus::Pending {
                    r.transition(IngestStatus::Running);
                }
                r.transition(IngestStatus::Failed);
            }
        }
    });
    *job.handle.lock() = Some(handle);
    job
}
