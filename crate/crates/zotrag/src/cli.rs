use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use zotrag_core::fixture::{FixtureTransport, FixtureWriter, RecordingTransport};
use zotrag_core::generator::ScriptFile;
use zotrag_core::http::{LiveTransport, Transport};
use zotrag_core::ingest::IngestStatus;
use zotrag_core::session::{render_answer, AskOverrides, EnvOverrides, ServiceOptions};
use zotrag_core::{LibraryType, PipelineConfig, SearchType, Service};

#[derive(Debug, Parser)]
#[command(name = "zotrag", version, about = "Ask questions about the PDFs in a Zotero library")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Download the library's PDFs and (re)build the index.
    Ingest,
    /// Ask one question and print the answer.
    Ask {
        question: String,
        #[arg(long, default_value = "cli")]
        session: String,
    },
    /// Interactive chat in the terminal.
    Chat {
        #[arg(long, default_value = "chat")]
        session: String,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8000")]
        bind: SocketAddr,
    },
    /// Write a session's transcript to stdout or a file.
    ExportHistory {
        session: String,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    #[arg(long, global = true, env = "DATA_DIR", default_value = "zotrag-data")]
    pub data_dir: PathBuf,
    #[arg(long, global = true, value_parser = parse_library_type, default_value = "group")]
    pub library_type: LibraryType,
    #[arg(long, global = true, env = "ZOTERO_LIBRARY_ID")]
    pub library_id: Option<String>,
    /// Defaults to 500, or to the existing index's value.
    #[arg(long, global = true)]
    pub chunk_size: Option<usize>,
    /// Defaults to 200, or to the existing index's value.
    #[arg(long, global = true)]
    pub chunk_overlap: Option<usize>,
    #[arg(long, global = true, default_value = "gpt-4")]
    pub model: String,
    #[arg(long, global = true, default_value_t = 4000)]
    pub max_tokens: u32,
    #[arg(long, global = true, default_value_t = 7)]
    pub k: usize,
    #[arg(long, global = true, default_value = "mmr")]
    pub search_type: SearchType,
    #[arg(long, global = true)]
    pub mmr_lambda: Option<f64>,
    #[arg(long, global = true)]
    pub score_threshold: Option<f64>,
    /// Local hash embeddings and scripted chat replies; no LLM traffic.
    #[arg(long, global = true)]
    pub mock_providers: bool,
    /// JSON file of scripted replies for --mock-providers.
    #[arg(long, global = true)]
    pub mock_script: Option<PathBuf>,
    /// Serve HTTP traffic from a recorded fixture directory instead of the network.
    #[arg(long, global = true, conflicts_with = "record")]
    pub replay: Option<PathBuf>,
    /// Record live HTTP traffic into a fixture directory.
    #[arg(long, global = true)]
    pub record: Option<PathBuf>,
}

fn parse_library_type(s: &str) -> Result<LibraryType, String> {
    match s {
        "user" => Ok(LibraryType::User),
        "group" => Ok(LibraryType::Group),
        other => Err(format!("expected user or group, got {other:?}")),
    }
}

impl GlobalArgs {
    pub fn pipeline_config(&self) -> PipelineConfig {
        let mut c = PipelineConfig::default();
        if self.mock_providers {
            c.use_mock_providers();
        }
        c.zotero.library_type = self.library_type;
        c.zotero.library_id = self.library_id.clone().unwrap_or_default();
        if let Some(v) = self.chunk_size {
            c.chunking.chunk_size = v;
        }
        if let Some(v) = self.chunk_overlap {
            c.chunking.chunk_overlap = v;
        }
        c.generation.model_id = self.model.clone();
        c.generation.max_tokens = self.max_tokens;
        c.retrieval = c.retrieval.with_k(self.k);
        c.retrieval.search_type = self.search_type;
        if let Some(v) = self.mmr_lambda {
            c.retrieval.lambda = v;
        }
        if let Some(v) = self.score_threshold {
            c.retrieval.score_threshold = v;
        }
        c
    }

    fn transport(&self) -> anyhow::Result<Arc<dyn Transport>> {
        if let Some(dir) = &self.replay {
            let t = FixtureTransport::load(dir).with_context(|| format!("loading fixtures from {}", dir.display()))?;
            return Ok(Arc::new(t));
        }
        if let Some(dir) = &self.record {
            let writer = FixtureWriter::create(dir).with_context(|| format!("creating {}", dir.display()))?;
            return Ok(Arc::new(RecordingTransport::new(LiveTransport::default(), writer)));
        }
        Ok(Arc::new(LiveTransport::default()))
    }

    /// Opens the service. Chunk settings not given on the command line follow the
    /// existing index so that a plain `ask` after `ingest --chunk-size ..` works.
    pub fn open_service(&self, env: EnvOverrides) -> anyhow::Result<Arc<Service>> {
        let mut options = ServiceOptions::new(&self.data_dir, self.transport()?);
        options.config = self.pipeline_config();
        options.env = env;
        if let Some(path) = &self.mock_script {
            let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            options.mock_script = serde_json::from_slice::<ScriptFile>(&bytes).context("parsing mock script")?;
        }
        let service = Service::open(options)?;
        if let Some(m) = service.index_manifest() {
            let mut params = service.config().chunking;
            params.chunk_size = self.chunk_size.unwrap_or(m.chunk_size);
            params.chunk_overlap = self.chunk_overlap.unwrap_or(m.chunk_overlap);
            service.apply_chunking_params(params)?;
        }
        Ok(service)
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let service = cli.global.open_service(EnvOverrides::from_env())?;
    match cli.command {
        Command::Ingest => ingest(&service, &cli.global),
        Command::Ask { question, session } => {
            let answer = service.ask(&session, &question, &AskOverrides::default())?;
            print!("{}", render_answer(&answer));
            Ok(())
        }
        Command::Chat { session } => chat(&service, &session),
        Command::Serve { bind } => serve(service, bind),
        Command::ExportHistory { session, out } => {
            let text = service.export_history(&session)?;
            match out {
                Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
            Ok(())
        }
    }
}

fn ingest(service: &Service, args: &GlobalArgs) -> anyhow::Result<()> {
    let Some(library_id) = args.library_id.as_deref() else {
        bail!("--library-id (or ZOTERO_LIBRARY_ID) is required for ingest");
    };
    let job = service.start_ingest(args.library_type, library_id)?;
    let report = service.wait_for_job(&job)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if report.status != IngestStatus::Done {
        bail!("ingest failed: {}", report.error.as_deref().unwrap_or("unknown error"));
    }
    Ok(())
}

fn chat(service: &Service, session: &str) -> anyhow::Result<()> {
    service.open_session(session)?;
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout();
    writeln!(stdout, "Session {session}. Type a question, /export <file> to save the history, /quit to leave.")?;
    loop {
        write!(stdout, "> ")?;
        stdout.flush()?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim();
        match line {
            "" => continue,
            "/quit" | "/exit" => break,
            _ => {}
        }
        if let Some(path) = line.strip_prefix("/export") {
            let path = path.trim();
            if path.is_empty() {
                writeln!(stdout, "usage: /export <file>")?;
                continue;
            }
            std::fs::write(path, service.export_history(session)?)?;
            writeln!(stdout, "saved to {path}")?;
            continue;
        }
        match service.ask(session, line, &AskOverrides::default()) {
            Ok(answer) => writeln!(stdout, "{}", render_answer(&answer))?,
            Err(e) => writeln!(stdout, "error: {e}")?,
        }
    }
    Ok(())
}

fn serve(service: Arc<Service>, bind: SocketAddr) -> anyhow::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind).await.with_context(|| format!("binding {bind}"))?;
        tracing::info!(%bind, "listening");
        axum::serve(listener, crate::api::router(service))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
