//! Wire-format conformance of the remote embedding and chat clients against recorded
//! exchanges whose request bodies are written out by hand.

use std::sync::Arc;
use std::time::Duration;

use zotrag_core::embedder::{embed_texts, Embedder, RemoteEmbedder, RetryPolicy, REMOTE_DIM};
use zotrag_core::fixture::{FixtureTransport, FixtureWriter};
use zotrag_core::generator::{
    build_prompt, generate_answer, resolve_citations, ChatProvider, GenConfig, GenerateError, PromptBundle,
    RemoteChat,
};
use zotrag_core::http::{HttpRequest, HttpResponse};
use zotrag_core::retriever::RetrievalResult;
use zotrag_core::Secret;

const LLM_KEY: &str = "sk-remote-fixture-91c";
const BASE: &str = "http://llm.fixture";

fn json_response(status: u16, body: &str) -> HttpResponse {
    HttpResponse {
        status,
        headers: vec![("Content-Type".into(), "application/json".into())],
        body: body.as_bytes().to_vec(),
    }
}

fn embedding_payload(n: usize) -> String {
    let data: Vec<_> = (0..n)
        .map(|i| {
            let v: Vec<f32> = (0..REMOTE_DIM).map(|j| ((i * 31 + j * 7) % 97) as f32 / 97.0 - 0.5).collect();
            serde_json::json!({"object": "embedding", "index": i, "embedding": v})
        })
        .collect();
    serde_json::json!({"object": "list", "data": data, "model": "text-embedding-ada-002"}).to_string()
}

fn no_wait() -> RetryPolicy {
    RetryPolicy {
        max_tries: 5,
        base_delay: Duration::ZERO,
        factor: 2,
    }
}

#[test]
fn embeddings_request_and_response() {
    let dir = tempfile::tempdir().unwrap();
    let writer = FixtureWriter::create(dir.path()).unwrap();
    let body = br#"{"model":"text-embedding-ada-002","input":["sickle cell","hemoglobin"]}"#.to_vec();
    let req = HttpRequest::post_json(format!("{BASE}/v1/embeddings"), body);
    writer
        .record(
            &req,
            &[("Authorization", &format!("Bearer {LLM_KEY}"))],
            true,
            &json_response(200, &embedding_payload(2)),
        )
        .unwrap();
    let embedder = RemoteEmbedder::new(
        Arc::new(FixtureTransport::load(dir.path()).unwrap()),
        format!("{BASE}/"),
        "text-embedding-ada-002".into(),
        Secret::new(LLM_KEY),
        REMOTE_DIM,
    );
    let vectors = embed_texts(&embedder, &["sickle cell".into(), "hemoglobin".into()]).unwrap();
    assert_eq!(vectors.len(), 2);
    assert!(vectors.iter().all(|v| v.dim() == 1536 && (v.norm() - 1.0).abs() < 1e-5));
    assert_ne!(vectors[0], vectors[1]);
    assert_eq!(embedder.id(), "remote:text-embedding-ada-002/1536");
}

#[test]
fn embeddings_retry_after_rate_limit() {
    let dir = tempfile::tempdir().unwrap();
    let writer = FixtureWriter::create(dir.path()).unwrap();
    let req = HttpRequest::post_json(format!("{BASE}/v1/embeddings"), br#"{"model":"m","input":["x"]}"#.to_vec());
    writer
        .record(&req, &[], true, &json_response(429, r#"{"error":{"message":"slow down"}}"#))
        .unwrap();
    let fixtures = Arc::new(FixtureTransport::load(dir.path()).unwrap());
    let embedder = RemoteEmbedder::new(fixtures.clone(), BASE.into(), "m".into(), Secret::new(LLM_KEY), REMOTE_DIM)
        .with_retry(no_wait());
    let err = embedder.embed_batch(&["x".into()]).unwrap_err();
    assert!(err.to_string().contains("429"));
    assert_eq!(fixtures.served().len(), 5);
}

fn bundle() -> PromptBundle {
    let mut b = build_prompt("What causes sickling?", &RetrievalResult::default());
    b.system_text = "SYS".into();
    b.user_text = "USER".into();
    b.no_context = false;
    b
}

#[test]
fn chat_request_body_and_reply() {
    let dir = tempfile::tempdir().unwrap();
    let writer = FixtureWriter::create(dir.path()).unwrap();
    let body = br#"{"model":"gpt-4","messages":[{"role":"system","content":"SYS"},{"role":"user","content":"USER"}],"max_tokens":4000,"temperature":0.0}"#;
    let req = HttpRequest::post_json(format!("{BASE}/v1/chat/completions"), body.to_vec());
    let reply = r#"{"id":"chatcmpl-1","object":"chat.completion","choices":[{"index":0,"message":{"role":"assistant","content":"Polymerized HbS deforms the cell [1]."},"finish_reason":"stop"}]}"#;
    writer
        .record(&req, &[("Authorization", &format!("Bearer {LLM_KEY}"))], true, &json_response(200, reply))
        .unwrap();
    let chat = RemoteChat::new(Arc::new(FixtureTransport::load(dir.path()).unwrap()));
    let cfg = GenConfig {
        base_url: BASE.into(),
        api_key: Some(Secret::new(LLM_KEY)),
        ..GenConfig::default()
    };
    assert_eq!(chat.complete(&cfg, &bundle()).unwrap(), "Polymerized HbS deforms the cell [1].");
    let text = generate_answer(&chat, &cfg, &bundle()).unwrap();
    let answer = resolve_citations(&text, &bundle(), &RetrievalResult::default());
    assert_eq!(answer.text, text);
}

#[test]
fn chat_context_overflow() {
    let dir = tempfile::tempdir().unwrap();
    let writer = FixtureWriter::create(dir.path()).unwrap();
    let req = HttpRequest::post_json(format!("{BASE}/v1/chat/completions"), Vec::new());
    writer
        .record(
            &req,
            &[],
            false,
            &json_response(
                400,
                r#"{"error":{"message":"This model's maximum context length is 8192 tokens.","type":"invalid_request_error","code":"context_length_exceeded"}}"#,
            ),
        )
        .unwrap();
    let chat = RemoteChat::new(Arc::new(FixtureTransport::load(dir.path()).unwrap()));
    let cfg = GenConfig {
        base_url: BASE.into(),
        api_key: Some(Secret::new(LLM_KEY)),
        ..GenConfig::default()
    };
    let err = chat.complete(&cfg, &bundle()).unwrap_err();
    assert!(matches!(err, GenerateError::ContextOverflow(_)));
    assert!(!err.to_string().contains(LLM_KEY));
}
