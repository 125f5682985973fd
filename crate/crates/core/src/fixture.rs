//! Recorded request/response fixtures.
//!
//! A scenario is a directory of numbered exchanges. Each exchange is a JSON metadata
//! file (`000.json`) plus optional raw body files it references:
//!
//! ```text
//! scenario/
//!   000.json       {"request": {...}, "response": {...}}
//!   000.body       raw response body
//!   001.json
//!   001.request    exact request body expected by the replay
//!   001.body
//! ```
//!
//! Replay picks the first exchange (in file order) whose method, URL and listed request
//! headers all match. If the exchange names a `body_file` for the request, the outgoing
//! body must equal it byte for byte.
//!
//! Credential headers used as match conditions are stored as `fnv1a64:<hex>` digests of
//! the value, never the value itself.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::embedder::fnv1a64;
use crate::http::{HttpRequest, HttpResponse, Method, Transport, TransportError};

/// Request headers that are never written into a recording.
pub const SENSITIVE_HEADERS: &[&str] = &["authorization", "zotero-api-key"];

const DIGEST_PREFIX: &str = "fnv1a64:";

fn is_sensitive(name: &str) -> bool {
    SENSITIVE_HEADERS.iter().any(|s| name.eq_ignore_ascii_case(s))
}

fn digest(value: &str) -> String {
    format!("{DIGEST_PREFIX}{:016x}", fnv1a64(value.as_bytes()))
}

fn header_matches(recorded: &str, actual: Option<&str>) -> bool {
    match (recorded.strip_prefix(DIGEST_PREFIX), actual) {
        (Some(_), Some(actual)) => digest(actual) == recorded,
        (None, Some(actual)) => actual == recorded,
        (_, None) => false,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordedRequest {
    pub method: String,
    pub url: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub headers: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_file: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordedResponse {
    pub status: u16,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub headers: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_file: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Exchange {
    pub request: RecordedRequest,
    pub response: RecordedResponse,
}

struct LoadedExchange {
    meta: Exchange,
    request_body: Option<Vec<u8>>,
    response: HttpResponse,
}

/// Replays a scenario directory.
pub struct FixtureTransport {
    exchanges: Vec<LoadedExchange>,
    served: Mutex<Vec<(Method, String)>>,
}

impl FixtureTransport {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, TransportError> {
        let dir = dir.as_ref();
        let mut metas: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| TransportError::Fixture(format!("{}: {e}", dir.display())))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
            .collect();
        metas.sort();

        let read = |name: &str| {
            fs::read(dir.join(name)).map_err(|e| TransportError::Fixture(format!("{name}: {e}")))
        };
        let mut exchanges = Vec::with_capacity(metas.len());
        for path in metas {
            let raw = fs::read(&path).map_err(|e| TransportError::Fixture(format!("{}: {e}", path.display())))?;
            let meta: Exchange = serde_json::from_slice(&raw)
                .map_err(|e| TransportError::Fixture(format!("{}: {e}", path.display())))?;
            let request_body = meta.request.body_file.as_deref().map(read).transpose()?;
            let body = meta.response.body_file.as_deref().map(read).transpose()?.unwrap_or_default();
            let response = HttpResponse {
                status: meta.response.status,
                headers: meta.response.headers.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
                body,
            };
            exchanges.push(LoadedExchange {
                meta,
                request_body,
                response,
            });
        }
        Ok(Self {
            exchanges,
            served: Mutex::new(Vec::new()),
        })
    }

    /// Requests answered so far, in order.
    pub fn served(&self) -> Vec<(Method, String)> {
        self.served.lock().clone()
    }

    fn matches(exchange: &LoadedExchange, request: &HttpRequest) -> bool {
        exchange.meta.request.method.eq_ignore_ascii_case(request.method.as_str())
            && exchange.meta.request.url == request.url
            && exchange
                .meta
                .request
                .headers
                .iter()
                .all(|(k, v)| header_matches(v, request.header_value(k)))
    }
}

impl Transport for FixtureTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let exchange = self
            .exchanges
            .iter()
            .find(|ex| Self::matches(ex, request))
            .ok_or_else(|| TransportError::NoFixture {
                method: request.method.as_str(),
                url: request.url.clone(),
            })?;
        if let Some(expected) = &exchange.request_body {
            if request.body.as_deref() != Some(expected.as_slice()) {
                return Err(TransportError::BodyMismatch {
                    url: request.url.clone(),
                });
            }
        }
        self.served.lock().push((request.method, request.url.clone()));
        Ok(exchange.response.clone())
    }
}

/// Writes exchanges into a scenario directory.
pub struct FixtureWriter {
    dir: PathBuf,
    next: AtomicUsize,
}

impl FixtureWriter {
    pub fn create(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let existing = fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|ext| ext == "json"))
            .count();
        Ok(Self {
            dir,
            next: AtomicUsize::new(existing),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Adds an exchange. `required_headers` become match conditions on replay;
    /// `check_body` freezes the request body for byte-exact comparison.
    pub fn record(
        &self,
        request: &HttpRequest,
        required_headers: &[(&str, &str)],
        check_body: bool,
        response: &HttpResponse,
    ) -> std::io::Result<()> {
        let n = self.next.fetch_add(1, Ordering::SeqCst);
        let stem = format!("{n:03}");
        let request_body_file = match (&request.body, check_body) {
            (Some(body), true) => {
                let name = format!("{stem}.request");
                fs::write(self.dir.join(&name), body)?;
                Some(name)
            }
            _ => None,
        };
        let response_body_file = if response.body.is_empty() {
            None
        } else {
            let name = format!("{stem}.body");
            fs::write(self.dir.join(&name), &response.body)?;
            Some(name)
        };
        let exchange = Exchange {
            request: RecordedRequest {
                method: request.method.as_str().to_string(),
                url: request.url.clone(),
                headers: required_headers
                    .iter()
                    .map(|(k, v)| {
                        let value = if is_sensitive(k) { digest(v) } else { v.to_string() };
                        (k.to_string(), value)
                    })
                    .collect(),
                body_file: request_body_file,
            },
            response: RecordedResponse {
                status: response.status,
                headers: response
                    .headers
                    .iter()
                    .filter(|(k, _)| k.eq_ignore_ascii_case("content-type") || k.eq_ignore_ascii_case("total-results"))
                    .map(|(k, v)| (k.to_ascii_lowercase(), v.clone()))
                    .collect(),
                body_file: response_body_file,
            },
        };
        let json = serde_json::to_vec_pretty(&exchange).map_err(std::io::Error::other)?;
        fs::write(self.dir.join(format!("{stem}.json")), json)
    }
}

/// Forwards to an inner transport and records every exchange, minus credentials.
pub struct RecordingTransport<T> {
    inner: T,
    writer: FixtureWriter,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, writer: FixtureWriter) -> Self {
        Self { inner, writer }
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let response = self.inner.send(request)?;
        let mut scrubbed = request.clone();
        scrubbed.headers.retain(|(k, _)| !is_sensitive(k));
        self.writer
            .record(&scrubbed, &[], false, &response)
            .map_err(|e| TransportError::Fixture(e.to_string()))?;
        Ok(response)
    }
}
