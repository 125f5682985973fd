//! Plain-text extraction from PDF files.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;

use thiserror::Error;

pub const PDF_MAGIC: &[u8] = b"%PDF";
pub const PAGE_SEPARATOR: &str = "\n\n";

#[derive(Debug, Error)]
pub enum PdfError {
    #[error("not a PDF file (missing %PDF header)")]
    NotAPdf,
    #[error("text extraction failed: {0}")]
    ExtractionFailed(String),
    #[error("document has no extractable text")]
    EmptyDocument,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedText {
    pub text: String,
    pub page_count: usize,
}

pub fn extract_text(path: &Path) -> Result<ExtractedText, PdfError> {
    let bytes = fs::read(path)?;
    extract_text_from_bytes(&bytes)
}

/// Extracts per-page text, trims each page, and joins pages with a blank line.
pub fn extract_text_from_bytes(bytes: &[u8]) -> Result<ExtractedText, PdfError> {
    if !bytes.starts_with(PDF_MAGIC) {
        return Err(PdfError::NotAPdf);
    }
    // pdf-extract panics on some malformed inputs.
    let pages = panic::catch_unwind(AssertUnwindSafe(|| pdf_extract::extract_text_from_mem_by_pages(bytes)))
        .map_err(|payload| {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "extractor panicked".into());
            PdfError::ExtractionFailed(msg)
        })?
        .map_err(|e| PdfError::ExtractionFailed(e.to_string()))?;

    let page_count = pages.len();
    let text = pages.iter().map(|p| p.trim()).collect::<Vec<_>>().join(PAGE_SEPARATOR);
    if text.trim().is_empty() {
        return Err(PdfError::EmptyDocument);
    }
    Ok(ExtractedText { text, page_count })
}
