#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use tower::ServiceExt;

use zotrag_core::fixture::FixtureTransport;
use zotrag_core::session::{EnvOverrides, ServiceOptions};
use zotrag_core::{PipelineConfig, Secret, Service};

pub struct Reply {
    pub status: StatusCode,
    pub content_type: String,
    pub disposition: String,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("not JSON ({e}): {}", self.text()))
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

/// Drives the router in-process.
pub struct Api {
    pub service: Arc<Service>,
    router: Router,
    runtime: tokio::runtime::Runtime,
    /// Every body served, for secrecy scans.
    pub transcript: std::sync::Mutex<Vec<u8>>,
}

impl Api {
    pub fn new(service: Arc<Service>) -> Self {
        Self {
            router: zotrag::router(service.clone()),
            service,
            runtime: tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap(),
            transcript: Default::default(),
        }
    }

    pub fn call(&self, method: Method, uri: &str, body: Option<serde_json::Value>) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(serde_json::to_vec(&v).unwrap())
            }
            None => Body::empty(),
        };
        let router = self.router.clone();
        let reply = self.runtime.block_on(async move {
            let resp = router.oneshot(req.body(body).unwrap()).await.unwrap();
            let header = |name| {
                resp.headers()
                    .get(name)
                    .map(|v: &axum::http::HeaderValue| v.to_str().unwrap().to_string())
                    .unwrap_or_default()
            };
            let status = resp.status();
            let content_type = header(axum::http::header::CONTENT_TYPE);
            let disposition = header(axum::http::header::CONTENT_DISPOSITION);
            let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
            Reply {
                status,
                content_type,
                disposition,
                body,
            }
        });
        let mut t = self.transcript.lock().unwrap();
        t.extend_from_slice(reply.content_type.as_bytes());
        t.extend_from_slice(reply.disposition.as_bytes());
        t.extend_from_slice(&reply.body);
        t.push(b'\n');
        reply
    }

    pub fn get(&self, uri: &str) -> Reply {
        self.call(Method::GET, uri, None)
    }

    pub fn post(&self, uri: &str, body: serde_json::Value) -> Reply {
        self.call(Method::POST, uri, Some(body))
    }

    pub fn put(&self, uri: &str, body: serde_json::Value) -> Reply {
        self.call(Method::PUT, uri, Some(body))
    }

    /// Starts an ingest and polls until it finishes; returns the final report.
    pub fn ingest(&self, library_type: &str, library_id: &str) -> serde_json::Value {
        let started = self.post(
            "/api/ingest",
            serde_json::json!({"library_type": library_type, "library_id": library_id}),
        );
        assert_eq!(started.status, StatusCode::ACCEPTED, "{}", started.text());
        let job_id = started.json()["job_id"].as_str().unwrap().to_string();
        for _ in 0..2000 {
            let report = self.get(&format!("/api/ingest/{job_id}")).json();
            if matches!(report["status"].as_str(), Some("done" | "failed")) {
                return report;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        panic!("ingest job {job_id} did not finish");
    }
}

/// A service over `data_dir` replaying `fixtures`, with offline providers.
pub fn mock_service(data_dir: &Path, fixtures: &Path, zotero_key: Option<&str>) -> Arc<Service> {
    let transport = Arc::new(FixtureTransport::load(fixtures).unwrap());
    let mut config = PipelineConfig::default();
    config.use_mock_providers();
    let mut options = ServiceOptions::new(data_dir, transport);
    options.config = config;
    options.env = EnvOverrides {
        zotero_api_key: zotero_key.map(Secret::new),
        ..EnvOverrides::default()
    };
    Service::open(options).unwrap()
}

/// Every file under `dir`, concatenated.
pub fn read_tree(dir: &Path) -> Vec<u8> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.extend(std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

pub fn contains(haystack: &[u8], needle: &str) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle.as_bytes())
}
