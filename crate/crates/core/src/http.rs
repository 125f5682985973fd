//! Minimal blocking HTTP abstraction shared by the Zotero client and the model providers.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use thiserror::Error;

/// Default number of requests allowed in flight to a single host.
pub const DEFAULT_PER_HOST_LIMIT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Get,
    Post,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Post => "POST",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: Method,
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Option<Vec<u8>>,
}

impl HttpRequest {
    pub fn get(url: impl Into<String>) -> Self {
        Self {
            method: Method::Get,
            url: url.into(),
            headers: Vec::new(),
            body: None,
        }
    }

    pub fn post_json(url: impl Into<String>, body: Vec<u8>) -> Self {
        Self {
            method: Method::Post,
            url: url.into(),
            headers: vec![("Content-Type".into(), "application/json".into())],
            body: Some(body),
        }
    }

    pub fn header(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }

    pub fn header_value(&self, name: &str) -> Option<&str> {
        find_header(&self.headers, name)
    }

    pub fn host(&self) -> &str {
        let rest = self.url.split_once("://").map_or(self.url.as_str(), |(_, r)| r);
        rest.split(['/', '?']).next().unwrap_or(rest)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn header_value(&self, name: &str) -> Option<&str> {
        find_header(&self.headers, name)
    }

    pub fn content_type(&self) -> Option<&str> {
        self.header_value("content-type")
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

fn find_header<'a>(headers: &'a [(String, String)], name: &str) -> Option<&'a str> {
    headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(name))
        .map(|(_, v)| v.as_str())
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("request timed out")]
    Timeout,
    #[error("no recorded fixture matches {method} {url}")]
    NoFixture { method: &'static str, url: String },
    #[error("request body for {url} differs from the recorded fixture")]
    BodyMismatch { url: String },
    #[error("fixture error: {0}")]
    Fixture(String),
}

/// Anything that can execute an [`HttpRequest`]. Implementations must be usable from
/// several threads at once.
pub trait Transport: Send + Sync {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        (**self).send(request)
    }
}

/// Counting semaphore keyed by host name.
#[derive(Debug)]
pub struct HostGate {
    limit: usize,
    in_flight: Mutex<HashMap<String, usize>>,
    released: Condvar,
}

impl HostGate {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            in_flight: Mutex::new(HashMap::new()),
            released: Condvar::new(),
        }
    }

    pub fn acquire(&self, host: &str) -> HostPermit<'_> {
        let mut map = self.in_flight.lock();
        loop {
            let count = map.entry(host.to_string()).or_insert(0);
            if *count < self.limit {
                *count += 1;
                break;
            }
            self.released.wait(&mut map);
        }
        HostPermit {
            gate: self,
            host: host.to_string(),
        }
    }

    pub fn in_flight(&self, host: &str) -> usize {
        self.in_flight.lock().get(host).copied().unwrap_or(0)
    }
}

pub struct HostPermit<'a> {
    gate: &'a HostGate,
    host: String,
}

impl Drop for HostPermit<'_> {
    fn drop(&mut self) {
        let mut map = self.gate.in_flight.lock();
        if let Some(count) = map.get_mut(&self.host) {
            *count = count.saturating_sub(1);
        }
        self.gate.released.notify_all();
    }
}

/// Live network transport.
pub struct LiveTransport {
    agent: ureq::Agent,
    gate: HostGate,
}

impl LiveTransport {
    pub fn new(timeout: Duration, per_host_limit: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .new_agent();
        Self {
            agent,
            gate: HostGate::new(per_host_limit),
        }
    }
}

impl Default for LiveTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(120), DEFAULT_PER_HOST_LIMIT)
    }
}

impl Transport for LiveTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let _permit = self.gate.acquire(request.host());
        let result = match (request.method, &request.body) {
            (Method::Get, _) => {
                let mut builder = self.agent.get(&request.url);
                for (k, v) in &request.headers {
                    builder = builder.header(k, v);
                }
                builder.call()
            }
            (Method::Post, body) => {
                let mut builder = self.agent.post(&request.url);
                for (k, v) in &request.headers {
                    builder = builder.header(k, v);
                }
                builder.send(body.as_deref().unwrap_or_default())
            }
        };
        let mut response = result.map_err(map_ureq_error)?;
        let status = response.status().as_u16();
        let headers = response
            .headers()
            .iter()
            .filter_map(|(k, v)| v.to_str().ok().map(|v| (k.as_str().to_string(), v.to_string())))
            .collect();
        let body = response
            .body_mut()
            .with_config()
            .limit(512 * 1024 * 1024)
            .read_to_vec()
            .map_err(map_ureq_error)?;
        Ok(HttpResponse { status, headers, body })
    }
}

fn map_ureq_error(err: ureq::Error) -> TransportError {
    match err {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        other => TransportError::Connection(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn host_extraction() {
        assert_eq!(HttpRequest::get("https://api.zotero.org/groups/53/items").host(), "api.zotero.org");
        assert_eq!(HttpRequest::get("http://localhost:8080?x=1").host(), "localhost:8080");
    }

    #[test]
    fn header_lookup_is_case_insensitive() {
        let req = HttpRequest::get("https://x").header("Zotero-API-Key", "k");
        assert_eq!(req.header_value("zotero-api-key"), Some("k"));
    }

    #[test]
    fn gate_caps_parallelism() {
        let gate = Arc::new(HostGate::new(2));
        let peak = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let gate = gate.clone();
                let peak = peak.clone();
                s.spawn(move || {
                    let _p = gate.acquire("h");
                    peak.fetch_max(gate.in_flight("h"), Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(gate.in_flight("h"), 0);
    }
}
