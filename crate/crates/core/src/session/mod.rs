//! The service layer: configuration, the ingest job slot, chat sessions and the ask
//! pipeline. Front ends (HTTP, CLI) are thin wrappers over [`Service`].

mod history;

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::chunker::ChunkParams;
use crate::config::{PipelineConfig, AVAILABLE_MODELS};
use crate::embedder::{EmbedError, EmbedderConfig, EmbedderProvider};
use crate::generator::{
    build_prompt, generate_answer, resolve_citations, Answer, ChatProvider, GenConfig, GenProvider, GenerateError,
    PromptBundle, RemoteChat, ScriptFile, ScriptedMock,
};
use crate::http::Transport;
use crate::ingest::{load_catalog, local_copy_complete, spawn_ingest, IngestJob, IngestReport, IngestRequest, IngestSource};
use crate::retriever::{retrieve, RetrievalConfig, RetrieveError, SearchType};
use crate::secret::Secret;
use crate::store::{self, StoreError, VectorStore};
use crate::zotero::{LibraryConfig, LibraryType, ZoteroClient};

pub use history::{export_transcript, parse_transcript, render_answer, ChatHistory, ChatTurn, Role};

pub const PDF_DIR: &str = "pdfs";
pub const INDEX_DIR: &str = "index";
pub const SESSIONS_DIR: &str = "sessions";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("no index has been built yet; run an ingest first")]
    NoIndex,
    #[error("the index was built with different chunking or embedding settings; re-ingest before asking")]
    IndexStale,
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("unknown ingest job {0:?}")]
    UnknownJob(String),
    #[error("an ingest job is already running")]
    Busy,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("{stage}: credentials were rejected")]
    Unauthorized { stage: &'static str },
    #[error("generator: {0}")]
    ContextOverflow(String),
    #[error("{stage}: {message}")]
    Pipeline { stage: &'static str, message: String },
}

impl ServiceError {
    fn stage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        ServiceError::Pipeline {
            stage,
            message: e.to_string(),
        }
    }
}

impl From<RetrieveError> for ServiceError {
    fn from(e: RetrieveError) -> Self {
        match e {
            RetrieveError::EmptyQuestion => ServiceError::InvalidParams("question is empty".into()),
            RetrieveError::InvalidConfig(m) => ServiceError::InvalidParams(m),
            RetrieveError::Embedding(EmbedError::Unauthorized(_)) => ServiceError::Unauthorized { stage: "embedder" },
            RetrieveError::Embedding(e) => ServiceError::stage("embedder", e),
            RetrieveError::Store(e) => ServiceError::stage("vector store", e),
        }
    }
}

impl From<GenerateError> for ServiceError {
    fn from(e: GenerateError) -> Self {
        match e {
            GenerateError::ContextOverflow(_) => ServiceError::ContextOverflow(e.to_string()),
            GenerateError::Unauthorized => ServiceError::Unauthorized { stage: "generator" },
            GenerateError::InvalidConfig(m) => ServiceError::InvalidParams(m),
            GenerateError::Provider(m) => ServiceError::stage("generator", m),
        }
    }
}

/// Values read from the process environment. They take precedence over anything set
/// through the config API.
#[derive(Debug, Clone, Default)]
pub struct EnvOverrides {
    pub zotero_api_key: Option<Secret>,
    pub llm_api_key: Option<Secret>,
    pub llm_base_url: Option<String>,
}

impl EnvOverrides {
    pub fn from_env() -> Self {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.trim().is_empty());
        Self {
            zotero_api_key: var("ZOTERO_API_KEY").map(Secret::new),
            llm_api_key: var("LLM_API_KEY").map(Secret::new),
            llm_base_url: var("LLM_BASE_URL"),
        }
    }

    /// Every secret value, for scrubbing and scanning.
    pub fn secrets(&self) -> Vec<&Secret> {
        self.zotero_api_key.iter().chain(self.llm_api_key.iter()).collect()
    }
}

pub struct ServiceOptions {
    pub data_dir: PathBuf,
    pub config: PipelineConfig,
    pub env: EnvOverrides,
    pub transport: Arc<dyn Transport>,
    pub mock_script: ScriptFile,
    /// Mirror each session to `{data_dir}/sessions/{id}.jsonl`.
    pub persist_sessions: bool,
}

impl ServiceOptions {
    pub fn new(data_dir: impl Into<PathBuf>, transport: Arc<dyn Transport>) -> Self {
        Self {
            data_dir: data_dir.into(),
            config: PipelineConfig::default(),
            env: EnvOverrides::default(),
            transport,
            mock_script: ScriptFile::default(),
            persist_sessions: true,
        }
    }
}

/// Per-request adjustments to retrieval and generation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AskOverrides {
    pub search_type: Option<SearchType>,
    pub k: Option<usize>,
    pub fetch_k: Option<usize>,
    pub lambda: Option<f64>,
    pub score_threshold: Option<f64>,
    pub model: Option<String>,
    pub max_tokens: Option<u32>,
}

impl AskOverrides {
    fn apply(&self, mut retrieval: RetrievalConfig, mut generation: GenConfig) -> (RetrievalConfig, GenConfig) {
        if let Some(k) = self.k {
            retrieval = retrieval.with_k(k);
        }
        if let Some(v) = self.fetch_k {
            retrieval.fetch_k = v;
        }
        if let Some(v) = self.search_type {
            retrieval.search_type = v;
        }
        if let Some(v) = self.lambda {
            retrieval.lambda = v;
        }
        if let Some(v) = self.score_threshold {
            retrieval.score_threshold = v;
        }
        if let Some(v) = &self.model {
            generation.model_id = v.clone();
        }
        if let Some(v) = self.max_tokens {
            generation.max_tokens = v;
        }
        (retrieval, generation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StalenessAck {
    pub changed: bool,
    pub index_stale: bool,
}

type StoreSlot = Arc<RwLock<Option<Arc<VectorStore>>>>;

pub struct Service {
    data_dir: PathBuf,
    config: RwLock<PipelineConfig>,
    env: EnvOverrides,
    transport: Arc<dyn Transport>,
    store: StoreSlot,
    sessions: Mutex<HashMap<String, Arc<Mutex<ChatHistory>>>>,
    jobs: Mutex<HashMap<String, Arc<IngestJob>>>,
    active_job: Mutex<Option<Arc<IngestJob>>>,
    mock: Arc<ScriptedMock>,
    persist_sessions: bool,
}

impl Service {
    /// Opens the service over `data_dir`, loading a previously persisted index and
    /// sessions when present.
    pub fn open(options: ServiceOptions) -> Result<Arc<Self>, ServiceError> {
        options
            .config
            .validate()
            .map_err(|e| ServiceError::InvalidParams(e.to_string()))?;
        fs::create_dir_all(&options.data_dir).map_err(|e| ServiceError::stage("data dir", e))?;
        let index_dir = options.data_dir.join(INDEX_DIR);
        let store = if index_dir.join(store::MANIFEST_FILE).is_file() {
            match store::load(&index_dir) {
                Ok(s) => Some(Arc::new(s)),
                Err(e @ (StoreError::CorruptStore(_) | StoreError::FormatVersionMismatch { .. })) => {
                    tracing::warn!(error = %e, "ignoring unreadable index; re-ingest to rebuild it");
                    None
                }
                Err(e) => return Err(ServiceError::stage("vector store", e)),
            }
        } else {
            None
        };
        let service = Self {
            data_dir: options.data_dir,
            config: RwLock::new(options.config),
            env: options.env,
            transport: options.transport,
            store: Arc::new(RwLock::new(store)),
            sessions: Mutex::new(HashMap::new()),
            jobs: Mutex::new(HashMap::new()),
            active_job: Mutex::new(None),
            mock: Arc::new(ScriptedMock::new(options.mock_script)),
            persist_sessions: options.persist_sessions,
        };
        if service.persist_sessions {
            service.load_sessions();
        }
        Ok(Arc::new(service))
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn scripted_mock(&self) -> &ScriptedMock {
        &self.mock
    }

    pub fn config(&self) -> PipelineConfig {
        self.config.read().clone()
    }

    pub fn has_index(&self) -> bool {
        self.store.read().is_some()
    }

    /// Settings the current index was built with.
    pub fn index_manifest(&self) -> Option<store::StoreManifest> {
        self.store.read().as_ref().map(|s| s.manifest().clone())
    }

    pub fn store_fingerprint(&self) -> Option<u32> {
        self.store.read().as_ref().map(|s| s.fingerprint())
    }

    /// True when an index exists but was built with settings other than the current ones.
    pub fn index_stale(&self) -> bool {
        let store = self.store.read();
        let config = self.config.read();
        store.as_ref().is_some_and(|s| is_stale(s, &config))
    }

    /// Effective configuration with secrets redacted, plus derived status fields.
    pub fn effective_config(&self) -> Value {
        let mut value = serde_json::to_value(&*self.config.read()).expect("config serializes");
        value["index_stale"] = self.index_stale().into();
        value["has_index"] = self.has_index().into();
        value["available_models"] = AVAILABLE_MODELS.into();
        value
    }

    pub fn update_config(&self, patch: &Value) -> Result<Value, ServiceError> {
        {
            let mut config = self.config.write();
            let next = config.merged(patch).map_err(|e| ServiceError::InvalidParams(e.0))?;
            *config = next;
        }
        Ok(self.effective_config())
    }

    pub fn apply_chunking_params(&self, params: ChunkParams) -> Result<StalenessAck, ServiceError> {
        params.validate().map_err(|e| ServiceError::InvalidParams(e.to_string()))?;
        let changed = {
            let mut config = self.config.write();
            let changed = config.chunking != params;
            config.chunking = params;
            changed
        };
        Ok(StalenessAck {
            changed,
            index_stale: self.index_stale(),
        })
    }

    fn effective_embedder(&self, config: &PipelineConfig) -> EmbedderConfig {
        let mut e = config.embedder.clone();
        if e.provider == EmbedderProvider::Remote {
            if let Some(key) = self.env.llm_api_key.clone().or_else(|| e.api_key.clone()).or_else(|| config.generation.api_key.clone()) {
                e.api_key = Some(key);
            }
            if let Some(url) = &self.env.llm_base_url {
                e.base_url = url.clone();
            }
        }
        e
    }

    fn effective_generation(&self, mut g: GenConfig) -> GenConfig {
        if let Some(key) = &self.env.llm_api_key {
            g.api_key = Some(key.clone());
        }
        if let Some(url) = &self.env.llm_base_url {
            g.base_url = url.clone();
        }
        g
    }

    /// Starts a background ingest and returns its job id.
    ///
    /// When the current index is stale only because settings changed and every file of
    /// the same library is already downloaded, the rebuild runs from the local copies.
    pub fn start_ingest(&self, library_type: LibraryType, library_id: &str) -> Result<String, ServiceError> {
        let mut active = self.active_job.lock();
        if active.as_ref().is_some_and(|j| !j.is_finished()) {
            return Err(ServiceError::Busy);
        }

        let config = self.config();
        let pdf_dir = self.data_dir.join(PDF_DIR);
        let library = LibraryConfig {
            api_key: self
                .env
                .zotero_api_key
                .clone()
                .or_else(|| config.zotero.api_key.clone())
                .unwrap_or_default(),
            library_type,
            library_id: library_id.to_string(),
        };
        library.validate().map_err(|e| ServiceError::InvalidParams(e.to_string()))?;

        let same_library = config.zotero.library_type == library_type && config.zotero.library_id == library_id;
        let rebuild_locally = same_library && self.index_stale() && local_copy_complete(&pdf_dir);
        let source = if rebuild_locally {
            let catalog = load_catalog(&pdf_dir).map_err(|e| ServiceError::stage("ingest", e))?;
            tracing::info!(documents = catalog.len(), "rebuilding index from downloaded files");
            IngestSource::Local { catalog }
        } else {
            if library.api_key.is_empty() {
                return Err(ServiceError::InvalidParams(
                    "a Zotero API key is required (set ZOTERO_API_KEY or zotero.api_key)".into(),
                ));
            }
            IngestSource::Zotero {
                client: ZoteroClient::new(self.transport.clone()),
                library,
            }
        };

        let embedder = self
            .effective_embedder(&config)
            .build(self.transport.clone())
            .map_err(|e| ServiceError::InvalidParams(e.to_string()))?;
        {
            let mut c = self.config.write();
            c.zotero.library_type = library_type;
            c.zotero.library_id = library_id.to_string();
        }

        let request = IngestRequest {
            source,
            pdf_dir,
            index_dir: Some(self.data_dir.join(INDEX_DIR)),
            chunking: config.chunking.clone(),
            embedder,
        };
        let slot = self.store.clone();
        let job = spawn_ingest(request, move |outcome| {
            if let Ok(store) = outcome {
                *slot.write() = Some(Arc::new(store.clone()));
            }
        });
        self.jobs.lock().insert(job.id.clone(), job.clone());
        *active = Some(job.clone());
        Ok(job.id.clone())
    }

    pub fn job_report(&self, job_id: &str) -> Result<IngestReport, ServiceError> {
        self.jobs
            .lock()
            .get(job_id)
            .map(|j| j.report())
            .ok_or_else(|| ServiceError::UnknownJob(job_id.to_string()))
    }

    /// Blocks until the job finishes.
    pub fn wait_for_job(&self, job_id: &str) -> Result<IngestReport, ServiceError> {
        let job = self
            .jobs
            .lock()
            .get(job_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownJob(job_id.to_string()))?;
        Ok(job.wait())
    }

    fn ready_store(&self) -> Result<Arc<VectorStore>, ServiceError> {
        let store = self.store.read().clone().ok_or(ServiceError::NoIndex)?;
        if is_stale(&store, &self.config.read()) {
            return Err(ServiceError::IndexStale);
        }
        Ok(store)
    }

    /// Retrieval and prompt assembly without generation.
    pub fn preview_prompt(&self, question: &str, overrides: &AskOverrides) -> Result<PromptBundle, ServiceError> {
        self.prepare(question, overrides).map(|p| p.bundle)
    }

    fn prepare(&self, question: &str, overrides: &AskOverrides) -> Result<Prepared, ServiceError> {
        if question.trim().is_empty() {
            return Err(ServiceError::InvalidParams("question is empty".into()));
        }
        let store = self.ready_store()?;
        let config = self.config();
        let (retrieval, generation) = overrides.apply(config.retrieval.clone(), config.generation.clone());
        retrieval.validate()?;
        generation.validate()?;
        let embedder = self
            .effective_embedder(&config)
            .build(self.transport.clone())
            .map_err(|e| match e {
                EmbedError::InvalidConfig(m) => ServiceError::InvalidParams(m),
                other => ServiceError::stage("embedder", other),
            })?;
        let result = retrieve(question, &retrieval, &store, embedder.as_ref())?;
        let bundle = build_prompt(question, &result);
        Ok(Prepared {
            result,
            bundle,
            generation: self.effective_generation(generation),
        })
    }

    /// Runs retrieval, generation and citation resolution, then records the exchange.
    pub fn ask(&self, session_id: &str, question: &str, overrides: &AskOverrides) -> Result<Answer, ServiceError> {
        validate_session_id(session_id)?;
        let prepared = self.prepare(question, overrides)?;
        let remote;
        let provider: &dyn ChatProvider = match prepared.generation.provider {
            GenProvider::ScriptedMock => self.mock.as_ref(),
            GenProvider::Remote => {
                remote = RemoteChat::new(self.transport.clone());
                &remote
            }
        };
        let raw = generate_answer(provider, &prepared.generation, &prepared.bundle)?;
        let answer = resolve_citations(&raw, &prepared.bundle, &prepared.result);
        for w in &answer.warnings {
            tracing::warn!(session = session_id, warning = %w, "answer warning");
        }

        let history = self.session_entry(session_id);
        let mut history = history.lock();
        let pair = history.push_exchange(question, answer.clone());
        if self.persist_sessions {
            if let Err(e) = self.append_session_file(session_id, &pair) {
                tracing::warn!(session = session_id, error = %e, "could not persist session turns");
            }
        }
        Ok(answer)
    }

    fn session_entry(&self, session_id: &str) -> Arc<Mutex<ChatHistory>> {
        self.sessions.lock().entry(session_id.to_string()).or_default().clone()
    }

    /// Creates an empty session if it does not exist yet.
    pub fn open_session(&self, session_id: &str) -> Result<(), ServiceError> {
        validate_session_id(session_id)?;
        self.session_entry(session_id);
        Ok(())
    }

    pub fn history(&self, session_id: &str) -> Result<Vec<ChatTurn>, ServiceError> {
        let entry = self
            .sessions
            .lock()
            .get(session_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_string()))?;
        let turns = entry.lock().turns().to_vec();
        Ok(turns)
    }

    pub fn export_history(&self, session_id: &str) -> Result<String, ServiceError> {
        let entry = self
            .sessions
            .lock()
            .get(session_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_string()))?;
        let history = entry.lock();
        Ok(export_transcript(session_id, &history))
    }

    fn sessions_dir(&self) -> PathBuf {
        self.data_dir.join(SESSIONS_DIR)
    }

    fn append_session_file(&self, session_id: &str, turns: &[ChatTurn]) -> std::io::Result<()> {
        let dir = self.sessions_dir();
        fs::create_dir_all(&dir)?;
        let mut buf = Vec::new();
        for t in turns {
            serde_json::to_writer(&mut buf, t).map_err(std::io::Error::other)?;
            buf.push(b'\n');
        }
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(format!("{session_id}.jsonl")))?;
        file.write_all(&buf)
    }

    fn load_sessions(&self) {
        let Ok(entries) = fs::read_dir(self.sessions_dir()) else {
            return;
        };
        let mut sessions = self.sessions.lock();
        for entry in entries.flatten() {
            let path = entry.path();
            let Some(id) = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".jsonl"))
            else {
                continue;
            };
            if validate_session_id(id).is_err() {
                continue;
            }
            let loaded = fs::read_to_string(&path).map_err(|e| e.to_string()).and_then(|text| {
                let turns = text
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| serde_json::from_str::<ChatTurn>(l).map_err(|e| e.to_string()))
                    .collect::<Result<Vec<_>, _>>()?;
                ChatHistory::from_turns(turns)
            });
            match loaded {
                Ok(history) => {
                    sessions.insert(id.to_string(), Arc::new(Mutex::new(history)));
                }
                Err(e) => tracing::warn!(session = id, error = %e, "skipping unreadable session file"),
            }
        }
    }
}

struct Prepared {
    result: crate::retriever::RetrievalResult,
    bundle: PromptBundle,
    generation: GenConfig,
}

fn is_stale(store: &VectorStore, config: &PipelineConfig) -> bool {
    let m = store.manifest();
    m.chunk_size != config.chunking.chunk_size
        || m.chunk_overlap != config.chunking.chunk_overlap
        || m.embedder_id != config.embedder.embedder_id()
}

/// Session ids double as file names, so they are limited to a safe alphabet.
pub fn validate_session_id(id: &str) -> Result<(), ServiceError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
    if ok {
        Ok(())
    } else {
        Err(ServiceError::InvalidParams(format!(
            "session id {id:?} must be 1-128 characters of letters, digits, '-' or '_'"
        )))
    }
}
