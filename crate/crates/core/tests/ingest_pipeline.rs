use std::sync::Arc;

use parking_lot::Mutex;
use zotrag_core::chunker::{chunk_document, ChunkParams};
use zotrag_core::embedder::{EmbedError, Embedder, EmbeddingVector, HashEmbedder};
use zotrag_core::fixture::FixtureTransport;
use zotrag_core::ingest::{
    load_catalog, run_ingest, spawn_ingest, IngestReport, IngestRequest, IngestSource, IngestStatus,
};
use zotrag_core::pdf::extract_text_from_bytes;
use zotrag_core::testkit::{
    image_only_pdf, sickle_cell_pages, text_pdf, write_sickle_cell_scenario, write_zotero_scenario, FixtureItem,
    SICKLE_CELL_LIBRARY_ID,
};
use zotrag_core::zotero::ZoteroClient;
use zotrag_core::{LibraryConfig, LibraryType};

const KEY: &str = "zk-ingest-test";

fn zotero_source(scenario: &std::path::Path, library_id: &str) -> IngestSource {
    IngestSource::Zotero {
        client: ZoteroClient::new(Arc::new(FixtureTransport::load(scenario).unwrap())),
        library: LibraryConfig::new(KEY, LibraryType::Group, library_id),
    }
}

fn request(source: IngestSource, data: &std::path::Path, embedder: Arc<dyn Embedder>) -> IngestRequest {
    IngestRequest {
        source,
        pdf_dir: data.join("pdfs"),
        index_dir: Some(data.join("index")),
        chunking: ChunkParams::default(),
        embedder,
    }
}

fn fresh_report() -> Mutex<IngestReport> {
    Mutex::new(IngestReport::new("test"))
}

#[test]
fn two_pdfs_match_chunker_oracle() {
    let scenario = tempfile::tempdir().unwrap();
    write_sickle_cell_scenario(scenario.path(), KEY).unwrap();
    let data = tempfile::tempdir().unwrap();
    let req = request(
        zotero_source(scenario.path(), SICKLE_CELL_LIBRARY_ID),
        data.path(),
        Arc::new(HashEmbedder::new(256)),
    );
    let report = fresh_report();
    let store = run_ingest(&req, &report).unwrap();
    let report = report.into_inner();
    assert_eq!(report.documents_ingested, 2);
    assert_eq!(report.documents_skipped, 0);

    let expected: usize = sickle_cell_pages()
        .iter()
        .enumerate()
        .map(|(i, pages)| {
            let text = extract_text_from_bytes(&text_pdf(pages)).unwrap().text;
            chunk_document(&format!("doc{i}"), &text, &ChunkParams::default()).unwrap().len()
        })
        .sum();
    assert_eq!(report.chunks_created, expected);
    assert_eq!(report.records_indexed, expected);
    assert_eq!(store.len(), expected);
    assert!(data.path().join("index/manifest.json").is_file());
    assert_eq!(load_catalog(&data.path().join("pdfs")).unwrap().len(), 2);
}

#[test]
fn ingest_is_idempotent() {
    let scenario = tempfile::tempdir().unwrap();
    write_sickle_cell_scenario(scenario.path(), KEY).unwrap();
    let data = tempfile::tempdir().unwrap();
    let run = || {
        let req = request(
            zotero_source(scenario.path(), SICKLE_CELL_LIBRARY_ID),
            data.path(),
            Arc::new(HashEmbedder::new(256)),
        );
        run_ingest(&req, &fresh_report()).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
    assert_eq!(a.fingerprint(), b.fingerprint());
}

#[test]
fn empty_library_completes_with_zero_counts() {
    let scenario = tempfile::tempdir().unwrap();
    write_zotero_scenario(scenario.path(), "https://api.zotero.org/groups/7", KEY, &[]).unwrap();
    let data = tempfile::tempdir().unwrap();
    let req = request(zotero_source(scenario.path(), "7"), data.path(), Arc::new(HashEmbedder::new(64)));
    let job = spawn_ingest(req, |_| {});
    let report = job.wait();
    assert_eq!(report.status, IngestStatus::Done);
    assert_eq!(
        (report.documents_ingested, report.documents_skipped, report.chunks_created, report.records_indexed),
        (0, 0, 0, 0)
    );
    assert!(report.started_at.is_some() && report.finished_at.is_some());
}

#[test]
fn image_only_pdf_is_skipped() {
    let scenario = tempfile::tempdir().unwrap();
    let items = vec![
        FixtureItem::pdf("TEXT0001", "one.pdf", "One", text_pdf(&["first document body"])),
        FixtureItem::pdf("IMAG0001", "scan.pdf", "Scan", image_only_pdf()),
        FixtureItem::pdf("TEXT0002", "two.pdf", "Two", text_pdf(&["second document body"])),
        FixtureItem::html_snapshot("HTML0001", "Snapshot"),
    ];
    write_zotero_scenario(scenario.path(), "https://api.zotero.org/groups/8", KEY, &items).unwrap();
    let data = tempfile::tempdir().unwrap();
    let req = request(zotero_source(scenario.path(), "8"), data.path(), Arc::new(HashEmbedder::new(64)));
    let report = fresh_report();
    let store = run_ingest(&req, &report).unwrap();
    let report = report.into_inner();
    assert_eq!(report.documents_ingested, 2);
    assert_eq!(report.documents_skipped, 1);
    assert_eq!(report.skipped[0].doc_id, "IMAG0001");
    assert_eq!(report.skipped[0].reason, "EmptyDocument");
    assert_eq!(report.non_pdf_attachments_skipped, 1);
    assert!(store.records().iter().all(|r| r.chunk.doc_id != "IMAG0001"));
}

#[test]
fn listing_failure_fails_the_job() {
    let scenario = tempfile::tempdir().unwrap();
    write_sickle_cell_scenario(scenario.path(), "zk-other-key").unwrap();
    let data = tempfile::tempdir().unwrap();
    let req = request(
        zotero_source(scenario.path(), SICKLE_CELL_LIBRARY_ID),
        data.path(),
        Arc::new(HashEmbedder::new(64)),
    );
    let job = spawn_ingest(req, |outcome| assert!(outcome.is_err()));
    let report = job.wait();
    assert_eq!(report.status, IngestStatus::Failed);
    assert!(report.error.unwrap().contains("403"));
}

/// Fails any batch containing the marker word; other texts get hash embeddings.
struct Flaky(HashEmbedder);

impl Embedder for Flaky {
    fn id(&self) -> String {
        self.0.id()
    }
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.iter().any(|t| t.contains("poison")) {
            return Err(EmbedError::Provider("HTTP 500".into()));
        }
        self.0.embed_batch(texts)
    }
}

#[test]
fn failed_document_leaves_no_records() {
    let scenario = tempfile::tempdir().unwrap();
    let long_page = "healthy words ".repeat(60) + "poison";
    let items = vec![
        FixtureItem::pdf("GOOD0001", "good.pdf", "Good", text_pdf(&["a perfectly ordinary page"])),
        FixtureItem::pdf("BAD00001", "bad.pdf", "Bad", text_pdf(&[&long_page])),
    ];
    write_zotero_scenario(scenario.path(), "https://api.zotero.org/groups/9", KEY, &items).unwrap();
    let data = tempfile::tempdir().unwrap();
    let req = request(zotero_source(scenario.path(), "9"), data.path(), Arc::new(Flaky(HashEmbedder::new(64))));
    let report = fresh_report();
    let store = run_ingest(&req, &report).unwrap();
    let report = report.into_inner();
    assert_eq!(report.documents_ingested, 1);
    assert_eq!(report.embedding_errors, 1);
    assert!(report.skipped[0].reason.starts_with("EmbeddingFailed"));
    assert!(store.records().iter().all(|r| r.chunk.doc_id == "GOOD0001"));
    assert_eq!(report.records_indexed, store.len());
}
