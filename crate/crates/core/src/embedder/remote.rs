use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbedError, Embedder, EmbeddingVector};
use crate::http::{HttpRequest, HttpResponse, Transport};
use crate::secret::Secret;

pub const EMBEDDING_BATCH_SIZE: usize = 64;
pub const MAX_INPUT_CHARS: usize = 8000;

/// Exponential backoff on HTTP 429.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_tries: u32,
    pub base_delay: Duration,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_tries: 5,
            base_delay: Duration::from_secs(1),
            factor: 2,
        }
    }
}

impl RetryPolicy {
    pub fn delay_before(&self, retry: u32) -> Duration {
        self.base_delay * self.factor.saturating_pow(retry)
    }

    /// Sends `request`, retrying while the server answers 429.
    pub fn send(&self, transport: &dyn Transport, request: &HttpRequest) -> Result<HttpResponse, String> {
        let mut attempt = 0;
        loop {
            let response = transport.send(request).map_err(|e| e.to_string())?;
            attempt += 1;
            if response.status != 429 || attempt >= self.max_tries {
                return Ok(response);
            }
            let delay = self.delay_before(attempt - 1);
            tracing::warn!(attempt, ?delay, url = %request.url, "rate limited, backing off");
            std::thread::sleep(delay);
        }
    }
}

#[derive(Serialize)]
struct EmbeddingsRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f32>,
}

/// OpenAI-compatible `POST {base}/v1/embeddings` client.
pub struct RemoteEmbedder {
    transport: Arc<dyn Transport>,
    base_url: String,
    model_id: String,
    api_key: Secret,
    dim: usize,
    retry: RetryPolicy,
}

impl RemoteEmbedder {
    pub fn new(transport: Arc<dyn Transport>, base_url: String, model_id: String, api_key: Secret, dim: usize) -> Self {
        Self {
            transport,
            base_url: base_url.trim_end_matches('/').to_string(),
            model_id,
            api_key,
            dim,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn embed_one_batch(&self, batch: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let input: Vec<String> = batch
            .iter()
            .map(|t| {
                if t.chars().count() > MAX_INPUT_CHARS {
                    tracing::warn!(chars = t.chars().count(), limit = MAX_INPUT_CHARS, "truncating embedding input");
                    t.chars().take(MAX_INPUT_CHARS).collect()
                } else {
                    t.clone()
                }
            })
            .collect();
        let body = serde_json::to_vec(&EmbeddingsRequest {
            model: &self.model_id,
            input: &input,
        })
        .map_err(|e| EmbedError::Provider(e.to_string()))?;
        let request = HttpRequest::post_json(format!("{}/v1/embeddings", self.base_url), body)
            .header("Authorization", format!("Bearer {}", self.api_key.expose()));
        let response = self
            .retry
            .send(self.transport.as_ref(), &request)
            .map_err(EmbedError::Provider)?;
        match response.status {
            200..=299 => {}
            401 | 403 => return Err(EmbedError::Unauthorized(format!("HTTP {}", response.status))),
            status => return Err(EmbedError::Provider(format!("HTTP {status}"))),
        }
        let mut parsed: EmbeddingsResponse =
            serde_json::from_slice(&response.body).map_err(|e| EmbedError::Provider(format!("malformed response: {e}")))?;
        if parsed.data.len() != batch.len() {
            return Err(EmbedError::Provider(format!(
                "expected {} embeddings, got {}",
                batch.len(),
                parsed.data.len()
            )));
        }
        if parsed.data.iter().all(|d| d.index.is_some()) {
            parsed.data.sort_by_key(|d| d.index);
        }
        parsed
            .data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.dim {
                    return Err(EmbedError::DimMismatch {
                        expected: self.dim,
                        got: d.embedding.len(),
                    });
                }
                EmbeddingVector::normalized(d.embedding).map_err(|_| EmbedError::Provider("provider returned a zero vector".into()))
            })
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote:{}/{}", self.model_id, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(EMBEDDING_BATCH_SIZE) {
            out.extend(self.embed_one_batch(batch)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::TransportError;
    use parking_lot::Mutex;

    struct Scripted {
        statuses: Mutex<Vec<u16>>,
        seen: Mutex<Vec<HttpRequest>>,
        dim: usize,
    }

    impl Transport for Scripted {
        fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
            self.seen.lock().push(request.clone());
            let status = {
                let mut s = self.statuses.lock();
                if s.is_empty() { 200 } else { s.remove(0) }
            };
            let body: serde_json::Value = serde_json::from_slice(request.body.as_ref().unwrap()).unwrap();
            let n = body["input"].as_array().unwrap().len();
            let data: Vec<_> = (0..n)
                .rev()
                .map(|i| serde_json::json!({"index": i, "embedding": (0..self.dim).map(|j| if j == i % self.dim { 2.0 } else { 0.0 }).collect::<Vec<f32>>()}))
                .collect();
            Ok(HttpResponse {
                status,
                headers: vec![],
                body: serde_json::to_vec(&serde_json::json!({"data": data})).unwrap(),
            })
        }
    }

    fn embedder(t: Arc<Scripted>, dim: usize) -> RemoteEmbedder {
        RemoteEmbedder::new(t, "https://llm.test/".into(), "m".into(), Secret::new("sk-test"), dim).with_retry(RetryPolicy {
            max_tries: 5,
            base_delay: Duration::from_millis(1),
            factor: 2,
        })
    }

    #[test]
    fn batches_and_reorders_by_index() {
        let t = Arc::new(Scripted { statuses: Mutex::new(vec![]), seen: Mutex::new(vec![]), dim: 4 });
        let texts: Vec<String> = (0..130).map(|i| format!("text {i}")).collect();
        let out = embedder(t.clone(), 4).embed_batch(&texts).unwrap();
        assert_eq!(out.len(), 130);
        assert_eq!(t.seen.lock().len(), 3);
        assert_eq!(out[1].values(), &[0.0, 1.0, 0.0, 0.0]);
        let first = &t.seen.lock()[0];
        assert_eq!(first.url, "https://llm.test/v1/embeddings");
        assert_eq!(first.header_value("authorization"), Some("Bearer sk-test"));
    }

    #[test]
    fn retries_on_429_then_gives_up() {
        let t = Arc::new(Scripted { statuses: Mutex::new(vec![429, 429]), seen: Mutex::new(vec![]), dim: 2 });
        assert!(embedder(t.clone(), 2).embed_batch(&["a".into()]).is_ok());
        assert_eq!(t.seen.lock().len(), 3);

        let t = Arc::new(Scripted { statuses: Mutex::new(vec![429; 10]), seen: Mutex::new(vec![]), dim: 2 });
        assert!(matches!(embedder(t.clone(), 2).embed_batch(&["a".into()]), Err(EmbedError::Provider(_))));
        assert_eq!(t.seen.lock().len(), 5);
    }

    #[test]
    fn backoff_schedule() {
        let p = RetryPolicy::default();
        let delays: Vec<u64> = (0..4).map(|r| p.delay_before(r).as_secs()).collect();
        assert_eq!(delays, [1, 2, 4, 8]);
    }

    #[test]
    fn wrong_dimension_and_auth() {
        let t = Arc::new(Scripted { statuses: Mutex::new(vec![]), seen: Mutex::new(vec![]), dim: 3 });
        assert!(matches!(
            embedder(t, 4).embed_batch(&["a".into()]),
            Err(EmbedError::DimMismatch { expected: 4, got: 3 })
        ));
        let t = Arc::new(Scripted { statuses: Mutex::new(vec![401]), seen: Mutex::new(vec![]), dim: 2 });
        let err = embedder(t, 2).embed_batch(&["a".into()]).unwrap_err();
        assert!(err.is_configuration());
    }

    #[test]
    fn long_inputs_truncated() {
        let t = Arc::new(Scripted { statuses: Mutex::new(vec![]), seen: Mutex::new(vec![]), dim: 2 });
        embedder(t.clone(), 2).embed_batch(&["x".repeat(9000)]).unwrap();
        let body: serde_json::Value = serde_json::from_slice(t.seen.lock()[0].body.as_ref().unwrap()).unwrap();
        assert_eq!(body["input"][0].as_str().unwrap().len(), MAX_INPUT_CHARS);
    }
}
