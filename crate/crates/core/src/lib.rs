//! Retrieval-augmented question answering over a Zotero PDF library.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! - [`zotero`] lists and downloads PDF attachments through the Zotero Web API v3.
//! - [`pdf`] and [`ingest`] turn downloaded files into [`ingest::SourceDocument`]s and
//!   drive the fetch → extract → chunk → embed → index job.
//! - [`chunker`] splits text with a recursive separator hierarchy.
//! - [`embedder`] maps texts to unit-norm vectors (remote OpenAI-compatible or local hash).
//! - [`store`] keeps records on disk and answers exact similarity, MMR and threshold queries.
//! - [`retriever`] embeds a question, dispatches the search and applies contextual compression.
//! - [`generator`] builds the numbered-sources prompt, calls the chat model and resolves citations.
//! - [`session`] ties everything together behind chat sessions, history export and config.
//!
//! All network traffic goes through [`http::Transport`], so every remote interaction can be
//! replayed offline from a [`fixture`] directory.

pub mod chunker;
pub mod config;
pub mod embedder;
pub mod fixture;
pub mod generator;
pub mod http;
pub mod ingest;
pub mod pdf;
pub mod retriever;
pub mod secret;
pub mod session;
pub mod store;
pub mod zotero;

#[cfg(any(test, feature = "testkit"))]
pub mod testkit;

pub use chunker::{Chunk, ChunkParams};
pub use config::PipelineConfig;
pub use embedder::{EmbedderConfig, EmbeddingVector};
pub use generator::{Answer, GenConfig};
pub use retriever::{RetrievalConfig, RetrievalResult, SearchType};
pub use secret::Secret;
pub use session::{Service, ServiceError};
pub use store::{ScoredHit, VectorRecord, VectorStore};
pub use zotero::{AttachmentRef, LibraryConfig, LibraryType};
