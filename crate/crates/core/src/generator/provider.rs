use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use super::{GenConfig, GenerateError, PromptBundle};
use crate::embedder::{fnv1a64, RetryPolicy};
use crate::http::{HttpRequest, Transport};

pub trait ChatProvider: Send + Sync {
    fn complete(&self, cfg: &GenConfig, bundle: &PromptBundle) -> Result<String, GenerateError>;
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    max_tokens: u32,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ErrorEnvelope {
    error: ErrorBody,
}

#[derive(Deserialize)]
struct ErrorBody {
    #[serde(default)]
    message: String,
    #[serde(default)]
    code: Option<String>,
}

/// OpenAI-compatible `POST {base}/v1/chat/completions` client.
pub struct RemoteChat {
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
}

impl RemoteChat {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self {
            transport,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn request_body(cfg: &GenConfig, bundle: &PromptBundle) -> Vec<u8> {
        let body = ChatRequest {
            model: &cfg.model_id,
            messages: [
                ChatMessage {
                    role: "system",
                    content: &bundle.system_text,
                },
                ChatMessage {
                    role: "user",
                    content: &bundle.user_text,
                },
            ],
            max_tokens: cfg.max_tokens,
            temperature: 0.0,
        };
        serde_json::to_vec(&body).expect("chat request serializes")
    }
}

impl ChatProvider for RemoteChat {
    fn complete(&self, cfg: &GenConfig, bundle: &PromptBundle) -> Result<String, GenerateError> {
        let key = cfg
            .api_key
            .as_ref()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| GenerateError::InvalidConfig("remote chat provider needs an api_key".into()))?;
        let url = format!("{}/v1/chat/completions", cfg.base_url.trim_end_matches('/'));
        let request = HttpRequest::post_json(url, Self::request_body(cfg, bundle))
            .header("Authorization", format!("Bearer {}", key.expose()));
        let response = self.retry.send(self.transport.as_ref(), &request).map_err(GenerateError::Provider)?;
        match response.status {
            200..=299 => {}
            401 | 403 => return Err(GenerateError::Unauthorized),
            status => {
                let detail = serde_json::from_slice::<ErrorEnvelope>(&response.body).ok();
                if let Some(d) = &detail {
                    if d.error.code.as_deref() == Some("context_length_exceeded") {
                        return Err(GenerateError::ContextOverflow(d.error.message.clone()));
                    }
                }
                let message = detail.map(|d| d.error.message).unwrap_or_default();
                return Err(GenerateError::Provider(format!("HTTP {status}: {message}")));
            }
        }
        let parsed: ChatResponse = serde_json::from_slice(&response.body)
            .map_err(|e| GenerateError::Provider(format!("malformed chat response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GenerateError::Provider("chat response has no choices".into()))
    }
}

/// Script key for a bundle: FNV-1a 64 over the system and user text, as 16 hex digits.
pub fn bundle_key(bundle: &PromptBundle) -> String {
    let mut bytes = Vec::with_capacity(bundle.system_text.len() + bundle.user_text.len() + 1);
    bytes.extend_from_slice(bundle.system_text.as_bytes());
    bytes.push(0x1f);
    bytes.extend_from_slice(bundle.user_text.as_bytes());
    format!("{:016x}", fnv1a64(&bytes))
}

/// On-disk form of a mock script.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptFile {
    #[serde(default)]
    pub replies: BTreeMap<String, String>,
    #[serde(default)]
    pub fallback: Option<String>,
}

/// Deterministic offline provider: replies are looked up by [`bundle_key`].
///
/// Without a matching entry it returns the script's fallback, or a generated reply
/// that cites every supplied source.
#[derive(Debug, Default)]
pub struct ScriptedMock {
    script: RwLock<ScriptFile>,
}

impl ScriptedMock {
    pub fn new(script: ScriptFile) -> Self {
        Self {
            script: RwLock::new(script),
        }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        let script = serde_json::from_slice(&bytes).map_err(std::io::Error::other)?;
        Ok(Self::new(script))
    }

    pub fn insert(&self, key: impl Into<String>, reply: impl Into<String>) {
        self.script.write().replies.insert(key.into(), reply.into());
    }

    pub fn set_fallback(&self, reply: Option<String>) {
        self.script.write().fallback = reply;
    }

    fn generated_reply(bundle: &PromptBundle) -> String {
        let markers: String = bundle.source_index.iter().map(|s| format!("[{}]", s.n)).collect();
        format!(
            "This reply was produced offline from {} retrieved excerpt(s) {markers}.",
            bundle.chunk_map.len()
        )
    }
}

impl ChatProvider for ScriptedMock {
    fn complete(&self, _cfg: &GenConfig, bundle: &PromptBundle) -> Result<String, GenerateError> {
        let script = self.script.read();
        let key = bundle_key(bundle);
        if let Some(reply) = script.replies.get(&key) {
            return Ok(reply.clone());
        }
        tracing::debug!(%key, "no scripted reply for prompt, using fallback");
        Ok(script.fallback.clone().unwrap_or_else(|| Self::generated_reply(bundle)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::{HttpResponse, Method, TransportError};
    use crate::secret::Secret;
    use parking_lot::Mutex;

    fn bundle() -> PromptBundle {
        PromptBundle {
            system_text: "sys".into(),
            user_text: "user".into(),
            source_index: vec![super::super::SourceEntry {
                n: 1,
                doc_id: "A".into(),
                filename: "a.pdf".into(),
            }],
            chunk_map: vec![],
            no_context: false,
        }
    }

    struct Canned {
        status: u16,
        body: &'static str,
        seen: Mutex<Vec<HttpRequest>>,
    }

    impl Transport for Canned {
        fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
            self.seen.lock().push(request.clone());
            Ok(HttpResponse {
                status: self.status,
                headers: vec![],
                body: self.body.as_bytes().to_vec(),
            })
        }
    }

    fn remote_cfg() -> GenConfig {
        GenConfig {
            api_key: Some(Secret::new("sk-test")),
            base_url: "http://llm.local/".into(),
            ..GenConfig::default()
        }
    }

    #[test]
    fn scripted_pass_through_and_fallback() {
        let mock = ScriptedMock::default();
        let b = bundle();
        mock.insert(bundle_key(&b), "X [1].");
        assert_eq!(mock.complete(&GenConfig::default(), &b).unwrap(), "X [1].");
        let other = PromptBundle {
            user_text: "different".into(),
            ..b
        };
        let generated = mock.complete(&GenConfig::default(), &other).unwrap();
        assert!(generated.contains("[1]"));
        mock.set_fallback(Some("fixed".into()));
        assert_eq!(mock.complete(&GenConfig::default(), &other).unwrap(), "fixed");
    }

    #[test]
    fn remote_request_shape() {
        let t = Arc::new(Canned {
            status: 200,
            body: r#"{"choices":[{"message":{"role":"assistant","content":"ok [1]"}}]}"#,
            seen: Mutex::new(vec![]),
        });
        let chat = RemoteChat::new(t.clone());
        assert_eq!(chat.complete(&remote_cfg(), &bundle()).unwrap(), "ok [1]");
        let seen = t.seen.lock();
        assert_eq!(seen[0].method, Method::Post);
        assert_eq!(seen[0].url, "http://llm.local/v1/chat/completions");
        assert_eq!(seen[0].header_value("Authorization"), Some("Bearer sk-test"));
        let body: serde_json::Value = serde_json::from_slice(seen[0].body.as_ref().unwrap()).unwrap();
        assert_eq!(body["max_tokens"], 4000);
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"].as_array().unwrap().len(), 2);
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["role"], "user");
    }

    #[test]
    fn context_overflow_detected() {
        let t = Arc::new(Canned {
            status: 400,
            body: r#"{"error":{"message":"maximum context length is 8192 tokens","code":"context_length_exceeded"}}"#,
            seen: Mutex::new(vec![]),
        });
        let err = RemoteChat::new(t).complete(&remote_cfg(), &bundle()).unwrap_err();
        assert!(matches!(err, GenerateError::ContextOverflow(_)));
        assert!(err.to_string().contains("lower k or chunk_size"));
    }

    #[test]
    fn missing_key_and_auth_failure() {
        let t = Arc::new(Canned {
            status: 401,
            body: "{}",
            seen: Mutex::new(vec![]),
        });
        let chat = RemoteChat::new(t);
        assert!(matches!(
            chat.complete(&GenConfig::default(), &bundle()),
            Err(GenerateError::InvalidConfig(_))
        ));
        assert!(matches!(chat.complete(&remote_cfg(), &bundle()), Err(GenerateError::Unauthorized)));
    }
}
