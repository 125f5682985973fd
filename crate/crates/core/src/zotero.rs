//! Zotero Web API v3 client: PDF attachment listing and file download.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{HttpRequest, Transport, TransportError};
use crate::secret::Secret;

pub const API_ROOT: &str = "https://api.zotero.org";
pub const PAGE_SIZE: usize = 100;
pub const PDF_CONTENT_TYPE: &str = "application/pdf";

#[derive(Debug, Error)]
pub enum ZoteroError {
    #[error("library id {0:?} is not numeric")]
    InvalidLibraryId(String),
    #[error("Zotero rejected the API key (HTTP 403)")]
    AuthFailed,
    #[error("Zotero library not found (HTTP 404)")]
    LibraryNotFound,
    #[error("unexpected HTTP status {status} from Zotero")]
    UnexpectedStatus { status: u16 },
    #[error("transport error: {0}")]
    Transport(#[from] TransportError),
    #[error("malformed Zotero response: {0}")]
    Decode(String),
    #[error("attachment {item_key} is not a PDF (content type {content_type:?})")]
    NotAPdf { item_key: String, content_type: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LibraryType {
    User,
    #[default]
    Group,
}

impl LibraryType {
    fn path_segment(self) -> &'static str {
        match self {
            LibraryType::User => "users",
            LibraryType::Group => "groups",
        }
    }
}

impl FromStr for LibraryType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "user" => Ok(LibraryType::User),
            "group" => Ok(LibraryType::Group),
            other => Err(format!("library type must be \"user\" or \"group\", got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryConfig {
    pub api_key: Secret,
    pub library_type: LibraryType,
    pub library_id: String,
}

impl LibraryConfig {
    pub fn new(api_key: impl Into<String>, library_type: LibraryType, library_id: impl Into<String>) -> Self {
        Self {
            api_key: Secret::new(api_key),
            library_type,
            library_id: library_id.into(),
        }
    }

    pub fn validate(&self) -> Result<(), ZoteroError> {
        if self.library_id.is_empty() || !self.library_id.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ZoteroError::InvalidLibraryId(self.library_id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachmentRef {
    pub item_key: String,
    pub filename: String,
    pub title: String,
    pub content_type: String,
}

/// Result of a library listing, including how many non-PDF attachments were passed over.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachmentListing {
    pub pdfs: Vec<AttachmentRef>,
    pub skipped_non_pdf: usize,
}

pub fn build_base_url(cfg: &LibraryConfig) -> Result<String, ZoteroError> {
    cfg.validate()?;
    Ok(format!("{API_ROOT}/{}/{}", cfg.library_type.path_segment(), cfg.library_id))
}

pub fn items_url(base: &str, start: usize) -> String {
    format!("{base}/items?itemType=attachment&format=json&limit={PAGE_SIZE}&start={start}")
}

pub fn file_url(base: &str, item_key: &str) -> String {
    format!("{base}/items/{item_key}/file")
}

/// Replaces path separators and control characters with `_`.
pub fn sanitize_filename(name: &str) -> String {
    name.chars()
        .map(|c| if c == '/' || c == '\\' || c.is_control() { '_' } else { c })
        .collect()
}

/// Local file name for a downloaded attachment: `{item_key}_{sanitized filename}`.
pub fn local_file_name(attachment: &AttachmentRef) -> String {
    let name = if attachment.filename.is_empty() {
        "attachment.pdf"
    } else {
        attachment.filename.as_str()
    };
    format!("{}_{}", attachment.item_key, sanitize_filename(name))
}

#[derive(Deserialize)]
struct ItemEnvelope {
    key: String,
    data: ItemData,
}

#[derive(Deserialize)]
struct ItemData {
    #[serde(rename = "itemType", default)]
    item_type: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    filename: Option<String>,
    #[serde(rename = "contentType", default)]
    content_type: Option<String>,
}

#[derive(Clone)]
pub struct ZoteroClient {
    transport: Arc<dyn Transport>,
}

impl ZoteroClient {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self { transport }
    }

    fn authed(&self, cfg: &LibraryConfig, request: HttpRequest) -> HttpRequest {
        request
            .header("Zotero-API-Version", "3")
            .header("Zotero-API-Key", cfg.api_key.expose())
    }

    pub fn list_pdf_attachments(&self, cfg: &LibraryConfig) -> Result<Vec<AttachmentRef>, ZoteroError> {
        Ok(self.list_attachments(cfg)?.pdfs)
    }

    /// Lists every attachment page by page and keeps the PDFs, in API order.
    pub fn list_attachments(&self, cfg: &LibraryConfig) -> Result<AttachmentListing, ZoteroError> {
        let base = build_base_url(cfg)?;
        let mut listing = AttachmentListing::default();
        let mut seen = std::collections::HashSet::new();
        let mut start = 0;
        loop {
            let response = self.transport.send(&self.authed(cfg, HttpRequest::get(items_url(&base, start))))?;
            check_status(response.status)?;
            let items: Vec<ItemEnvelope> =
                serde_json::from_slice(&response.body).map_err(|e| ZoteroError::Decode(e.to_string()))?;
            let page_len = items.len();
            for item in items {
                if item.data.item_type != "attachment" {
                    continue;
                }
                let content_type = item.data.content_type.unwrap_or_default();
                if content_type != PDF_CONTENT_TYPE {
                    listing.skipped_non_pdf += 1;
                    continue;
                }
                if !seen.insert(item.key.clone()) {
                    continue;
                }
                let filename = item
                    .data
                    .filename
                    .filter(|f| !f.is_empty())
                    .unwrap_or_else(|| format!("{}.pdf", item.data.title));
                listing.pdfs.push(AttachmentRef {
                    item_key: item.key,
                    filename,
                    title: item.data.title,
                    content_type,
                });
            }
            if page_len < PAGE_SIZE {
                break;
            }
            start += PAGE_SIZE;
        }
        tracing::info!(
            pdfs = listing.pdfs.len(),
            skipped_non_pdf = listing.skipped_non_pdf,
            "listed Zotero attachments"
        );
        Ok(listing)
    }

    /// Downloads one attachment into `dest_dir`, replacing any earlier copy.
    pub fn download_attachment(
        &self,
        cfg: &LibraryConfig,
        attachment: &AttachmentRef,
        dest_dir: &Path,
    ) -> Result<PathBuf, ZoteroError> {
        if attachment.content_type != PDF_CONTENT_TYPE {
            return Err(ZoteroError::NotAPdf {
                item_key: attachment.item_key.clone(),
                content_type: attachment.content_type.clone(),
            });
        }
        let base = build_base_url(cfg)?;
        let response = self
            .transport
            .send(&self.authed(cfg, HttpRequest::get(file_url(&base, &attachment.item_key))))?;
        check_status(response.status)?;
        if let Some(ct) = response.content_type() {
            let mime = ct.split(';').next().unwrap_or("").trim();
            if mime != PDF_CONTENT_TYPE && mime != "application/octet-stream" {
                return Err(ZoteroError::NotAPdf {
                    item_key: attachment.item_key.clone(),
                    content_type: mime.to_string(),
                });
            }
        }

        fs::create_dir_all(dest_dir)?;
        let target = dest_dir.join(local_file_name(attachment));
        let mut tmp = tempfile_in(dest_dir, &attachment.item_key)?;
        tmp.1.write_all(&response.body)?;
        tmp.1.sync_all()?;
        drop(tmp.1);
        fs::rename(&tmp.0, &target)?;
        tracing::debug!(item_key = %attachment.item_key, bytes = response.body.len(), "downloaded attachment");
        Ok(target)
    }
}

fn tempfile_in(dir: &Path, stem: &str) -> std::io::Result<(PathBuf, fs::File)> {
    let path = dir.join(format!(".{stem}.{}.part", uuid::Uuid::new_v4().simple()));
    let file = fs::File::create(&path)?;
    Ok((path, file))
}

fn check_status(status: u16) -> Result<(), ZoteroError> {
    match status {
        200..=299 => Ok(()),
        403 => Err(ZoteroError::AuthFailed),
        404 => Err(ZoteroError::LibraryNotFound),
        status => Err(ZoteroError::UnexpectedStatus { status }),
    }
}
