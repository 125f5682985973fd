//! Prompt assembly, chat completion and citation resolution.

mod provider;

use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedder::DEFAULT_BASE_URL;
use crate::retriever::RetrievalResult;
use crate::secret::Secret;

pub use provider::{bundle_key, ChatProvider, RemoteChat, ScriptFile, ScriptedMock};

pub const PROMPT_TEMPLATE_VERSION: &str = "v1";
pub const PROMPT_TEMPLATE: &str = include_str!("../../resources/prompt.v1.txt");
const TEMPLATE_SPLIT: &str = "\n=====\n";

pub const DEFAULT_CHAT_MODEL: &str = "gpt-4";
pub const DEFAULT_MAX_TOKENS: u32 = 4000;
pub const NO_CONTEXT_ANSWER: &str = "No relevant documents were found in the library for this question.";
pub const NO_CITATIONS_WARNING: &str = "answer contains no citations";

static CITATION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[(\d+)\]").expect("valid regex"));

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("chat provider error: {0}")]
    Provider(String),
    #[error("the prompt exceeds the model's context window ({0}); lower k or chunk_size and try again")]
    ContextOverflow(String),
    #[error("chat provider rejected the API key")]
    Unauthorized,
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GenProvider {
    #[default]
    Remote,
    ScriptedMock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub provider: GenProvider,
    pub model_id: String,
    pub max_tokens: u32,
    pub base_url: String,
    pub api_key: Option<Secret>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            provider: GenProvider::Remote,
            model_id: DEFAULT_CHAT_MODEL.into(),
            max_tokens: DEFAULT_MAX_TOKENS,
            base_url: DEFAULT_BASE_URL.into(),
            api_key: None,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenerateError> {
        if self.max_tokens == 0 {
            return Err(GenerateError::InvalidConfig("max_tokens must be at least 1".into()));
        }
        if self.model_id.trim().is_empty() {
            return Err(GenerateError::InvalidConfig("model_id must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub n: usize,
    pub doc_id: String,
    pub filename: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkEntry {
    pub n: usize,
    pub record_id: String,
    pub excerpt: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub source_index: Vec<SourceEntry>,
    pub chunk_map: Vec<ChunkEntry>,
    /// Set when retrieval returned nothing; generation then short-circuits.
    pub no_context: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    pub n: usize,
    pub filename: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceExcerpt {
    pub text: String,
    pub filename: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub references: Vec<Reference>,
    pub source_excerpts: Vec<SourceExcerpt>,
    pub all_relevant_sources: Vec<String>,
    pub warnings: Vec<String>,
}

fn template_parts() -> (&'static str, &'static str) {
    PROMPT_TEMPLATE
        .split_once(TEMPLATE_SPLIT)
        .expect("prompt template has a system and a user part")
}

/// Numbers documents by first appearance in `result.hits` and lays out the sources
/// block, grouping each document's excerpts under its number.
pub fn build_prompt(question: &str, result: &RetrievalResult) -> PromptBundle {
    let mut source_index: Vec<SourceEntry> = Vec::new();
    let mut numbers: HashMap<&str, usize> = HashMap::new();
    let mut chunk_map = Vec::with_capacity(result.hits.len());
    for hit in &result.hits {
        let doc_id = hit.record.chunk.doc_id.as_str();
        let n = *numbers.entry(doc_id).or_insert_with(|| {
            source_index.push(SourceEntry {
                n: source_index.len() + 1,
                doc_id: doc_id.to_string(),
                filename: hit.record.filename().to_string(),
            });
            source_index.len()
        });
        chunk_map.push(ChunkEntry {
            n,
            record_id: hit.record.record_id.clone(),
            excerpt: hit.record.chunk.text.clone(),
            score: hit.score,
        });
    }

    let mut sources = String::new();
    for entry in &source_index {
        if !sources.is_empty() {
            sources.push_str("\n\n");
        }
        sources.push_str(&format!("[{}] {}", entry.n, entry.filename));
        for chunk in chunk_map.iter().filter(|c| c.n == entry.n) {
            sources.push_str("\n\n");
            sources.push_str(&chunk.excerpt);
        }
    }
    let (system, user) = template_parts();
    PromptBundle {
        system_text: system.trim_end().to_string(),
        user_text: user
            .replace("{sources}", &sources)
            .replace("{question}", question.trim())
            .trim_end()
            .to_string(),
        source_index,
        chunk_map,
        no_context: result.hits.is_empty(),
    }
}

/// Returns the raw completion, or the fixed no-context reply without calling the provider.
pub fn generate_answer(provider: &dyn ChatProvider, cfg: &GenConfig, bundle: &PromptBundle) -> Result<String, GenerateError> {
    if bundle.no_context {
        return Ok(NO_CONTEXT_ANSWER.to_string());
    }
    cfg.validate()?;
    provider.complete(cfg, bundle)
}

/// Attaches references, excerpts and warnings to `raw`. The text itself is never changed.
pub fn resolve_citations(raw: &str, bundle: &PromptBundle, result: &RetrievalResult) -> Answer {
    let references: Vec<Reference> = bundle
        .source_index
        .iter()
        .map(|s| Reference {
            n: s.n,
            filename: s.filename.clone(),
        })
        .collect();

    let mut warnings = Vec::new();
    let mut any_marker = false;
    for cap in CITATION.captures_iter(raw) {
        any_marker = true;
        let digits = &cap[1];
        let in_range = digits.parse::<usize>().is_ok_and(|n| n >= 1 && n <= references.len());
        if !in_range {
            let warning = format!("unresolved citation [{digits}]");
            if !warnings.contains(&warning) {
                warnings.push(warning);
            }
        }
    }
    if !any_marker && !references.is_empty() {
        warnings.push(NO_CITATIONS_WARNING.to_string());
    }

    let source_excerpts = result
        .hits
        .iter()
        .map(|h| SourceExcerpt {
            text: h.record.chunk.text.clone(),
            filename: h.record.filename().to_string(),
            score: h.score,
        })
        .collect();
    let mut all_relevant_sources: Vec<String> = Vec::new();
    for h in &result.hits {
        let f = h.record.filename();
        if !all_relevant_sources.iter().any(|s| s == f) {
            all_relevant_sources.push(f.to_string());
        }
    }

    Answer {
        text: raw.to_string(),
        references,
        source_excerpts,
        all_relevant_sources,
        warnings,
    }
}
