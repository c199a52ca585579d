//! Literature knowledge base: Markdown ingestion, hierarchical vector
//! retrieval, cited question answering, multi-step research and a
//! multiple-choice benchmark harness.

pub mod config;
pub mod enrich;
pub mod eval;
pub mod ingest;
pub mod pipeline;
pub mod provider;
pub mod qa;
pub mod research;
pub mod store;

pub use config::ServiceConfig;
pub use enrich::{EmbeddingVector, DEFAULT_DIMENSION, DEFAULT_MAX_QUESTIONS};
pub use ingest::{Chunk, DocType, DocumentMetadata, RawDocument};
pub use qa::{Citation, QaEngine, QaEvent, QaRequest, QaResponse};
pub use research::{ResearchEngine, ResearchReport, ResearchRequest};
pub use store::{Hit, SearchParams, VectorStore};
