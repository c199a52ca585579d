//! End-to-end ingestion: screen, segment, clean, merge, generate questions,
//! embed and commit to the store.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enrich::{embed_texts, generate_questions, EnrichError};
use crate::ingest::{
    apply_merges, clean_chunk, propose_merges, screen_document, segment_document, IngestError,
    RawDocument,
};
use crate::provider::{EmbeddingProvider, TextProvider};
use crate::store::{ChunkIndexEntry, DocEntry, StoreError, VectorStore};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{doc_id}: {source}")]
    Ingest {
        doc_id: String,
        #[source]
        source: IngestError,
    },
    #[error("{doc_id}: embedding failed: {source}")]
    Embedding {
        doc_id: String,
        #[source]
        source: EnrichError,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl PipelineError {
    pub fn is_provider_failure(&self) -> bool {
        match self {
            PipelineError::Embedding { source, .. } => !matches!(source, EnrichError::Dimension { .. }),
            PipelineError::Ingest { source, .. } => matches!(source, IngestError::Provider(_)),
            PipelineError::Store(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub clean: bool,
    pub merge: bool,
    pub questions: bool,
    pub max_questions: usize,
    pub min_chunk_chars: usize,
    pub screen_topic: Option<String>,
    pub dimension: usize,
    pub embed_batch: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        let e = crate::config::EnrichmentConfig::default();
        Self {
            clean: e.clean,
            merge: e.merge,
            questions: e.questions,
            max_questions: e.max_questions,
            min_chunk_chars: e.min_chunk_chars,
            screen_topic: e.screen_topic,
            dimension: crate::enrich::DEFAULT_DIMENSION,
            embed_batch: e.embed_batch,
        }
    }
}

impl IngestOptions {
    /// Segmentation and embedding only; no text-provider calls.
    pub fn offline(dimension: usize) -> Self {
        Self {
            clean: false,
            merge: false,
            questions: false,
            screen_topic: None,
            dimension,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentSummary {
    pub doc_id: String,
    pub chunks: usize,
    pub questions: usize,
    pub merged_groups: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub documents: Vec<DocumentSummary>,
    /// Documents rejected by the relevance screen.
    pub screened_out: Vec<String>,
    pub chunks: usize,
    pub questions: usize,
    pub warnings: Vec<String>,
}

/// A document ready to be committed.
#[derive(Debug, Clone)]
pub struct PreparedDocument {
    pub entry: DocEntry,
    pub chunks: Vec<ChunkIndexEntry>,
    pub summary: DocumentSummary,
    pub warnings: Vec<String>,
}

pub enum Prepared {
    Ready(Box<PreparedDocument>),
    ScreenedOut { doc_id: String, warning: Option<String> },
}

/// Runs every stage for one document without touching the store.
pub fn prepare_document(
    doc: &RawDocument,
    text_llm: &dyn TextProvider,
    embedder: &dyn EmbeddingProvider,
    opts: &IngestOptions,
) -> Result<Prepared, PipelineError> {
    let doc_id = doc.metadata.doc_id.clone();
    let ingest_err = |source| PipelineError::Ingest {
        doc_id: doc_id.clone(),
        source,
    };
    doc.validate().map_err(ingest_err)?;
    let mut warnings = Vec::new();

    if let Some(topic) = &opts.screen_topic {
        match screen_document(doc, topic, text_llm) {
            Ok(true) => {}
            Ok(false) => return Ok(Prepared::ScreenedOut { doc_id, warning: None }),
            Err(e) => {
                return Ok(Prepared::ScreenedOut {
                    warning: Some(format!("{doc_id}: relevance screen failed, document skipped: {e}")),
                    doc_id,
                })
            }
        }
    }

    let mut chunks = segment_document(doc);
    if opts.clean {
        chunks = chunks
            .iter()
            .map(|c| match clean_chunk(c, text_llm) {
                Ok(out) => {
                    warnings.extend(out.warning);
                    out.chunk
                }
                Err(e) => {
                    warnings.push(format!("{}: cleaning failed, original kept: {e}", c.chunk_id));
                    c.clone()
                }
            })
            .collect();
    }
    let mut merged_groups = 0;
    if opts.merge {
        let outcome = propose_merges(&chunks, text_llm, opts.min_chunk_chars);
        warnings.extend(outcome.warnings);
        merged_groups = outcome.plan.groups.len();
        chunks = apply_merges(&chunks, &outcome.plan).map_err(ingest_err)?;
    }

    let questions: Vec<_> = if opts.questions {
        chunks
            .iter()
            .map(|c| {
                let g = generate_questions(c, text_llm, opts.max_questions);
                warnings.extend(g.warning);
                g.questions
            })
            .collect()
    } else {
        vec![Vec::new(); chunks.len()]
    };

    let mut texts = Vec::with_capacity(1 + chunks.len() * (1 + opts.max_questions));
    texts.push(doc.abstract_text.clone());
    texts.extend(chunks.iter().map(|c| c.text.clone()));
    texts.extend(questions.iter().flatten().map(|q| q.text.clone()));
    let mut vectors = embed_texts(&texts, embedder, opts.dimension, opts.embed_batch)
        .map_err(|source| PipelineError::Embedding {
            doc_id: doc_id.clone(),
            source,
        })?
        .into_iter();

    let abstract_vector = vectors.next().expect("one vector per text");
    let chunk_vectors: Vec<_> = vectors.by_ref().take(chunks.len()).collect();
    let mut entries = Vec::with_capacity(chunks.len());
    let mut question_count = 0;
    for ((chunk, chunk_vector), qs) in chunks.into_iter().zip(chunk_vectors).zip(questions) {
        question_count += qs.len();
        let question_vectors = qs
            .into_iter()
            .map(|q| (q.question_id, vectors.next().expect("one vector per question")))
            .collect();
        entries.push(ChunkIndexEntry {
            chunk_id: chunk.chunk_id,
            doc_id: chunk.doc_id,
            heading_path: chunk.heading_path,
            text: chunk.text,
            chunk_vector,
            question_vectors,
        });
    }

    Ok(Prepared::Ready(Box::new(PreparedDocument {
        entry: DocEntry {
            doc_id: doc_id.clone(),
            abstract_vector,
            doc_type: doc.metadata.doc_type,
            metadata: doc.metadata.clone(),
        },
        summary: DocumentSummary {
            doc_id,
            chunks: entries.len(),
            questions: question_count,
            merged_groups,
        },
        chunks: entries,
        warnings,
    })))
}

/// Prepares documents in parallel and commits them in one atomic store
/// write. Any preparation error aborts the whole batch.
pub fn ingest_documents(
    docs: &[RawDocument],
    store: &VectorStore,
    text_llm: &dyn TextProvider,
    embedder: &dyn EmbeddingProvider,
    opts: &IngestOptions,
) -> Result<IngestReport, PipelineError> {
    let prepared: Vec<Prepared> = docs
        .par_iter()
        .map(|d| prepare_document(d, text_llm, embedder, opts))
        .collect::<Result<_, _>>()?;

    let mut report = IngestReport::default();
    let mut batch = Vec::new();
    for p in prepared {
        match p {
            Prepared::Ready(p) => {
                let p = *p;
                report.chunks += p.summary.chunks;
                report.questions += p.summary.questions;
                report.warnings.extend(p.warnings);
                report.documents.push(p.summary);
                batch.push((p.entry, p.chunks));
            }
            Prepared::ScreenedOut { doc_id, warning } => {
                report.warnings.extend(warning);
                report.screened_out.push(doc_id);
            }
        }
    }
    store.upsert_many(batch)?;
    Ok(report)
}
