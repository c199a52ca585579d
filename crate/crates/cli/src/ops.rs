//! Operations shared by the HTTP handlers and the subcommands, so both
//! surfaces return identical payloads.

use std::path::PathBuf;

use litkb_core::enrich::EnrichError;
use litkb_core::ingest::{format_citation, load_manifest, DocType, DocumentMetadata, IngestError, RawDocument};
use litkb_core::pipeline::{ingest_documents, IngestReport, PipelineError};
use litkb_core::provider::ProviderError;
use litkb_core::qa::{citation_url, QaError};
use litkb_core::research::ResearchError;
use litkb_core::store::StoreCounts;
use litkb_core::{QaRequest, QaResponse, ResearchReport, ResearchRequest};
use serde::{Deserialize, Serialize};

use crate::state::AppState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    ProviderUnavailable,
    StoreUnavailable,
    Internal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpError {
    pub code: ErrorCode,
    pub message: String,
    /// Set for lookups of an unknown id.
    pub not_found: bool,
}

impl OpError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            not_found: false,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self {
            not_found: true,
            ..Self::bad_request(message)
        }
    }
}

impl std::fmt::Display for OpError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn enrich_code(e: &EnrichError) -> ErrorCode {
    match e {
        EnrichError::Provider(_) => ErrorCode::ProviderUnavailable,
        _ => ErrorCode::Internal,
    }
}

impl From<QaError> for OpError {
    fn from(e: QaError) -> Self {
        let code = match &e {
            QaError::InvalidRequest(_) => ErrorCode::BadRequest,
            QaError::Embedding(inner) => enrich_code(inner),
            QaError::Store(_) => ErrorCode::Internal,
            QaError::Answer { .. } => ErrorCode::ProviderUnavailable,
        };
        OpError::new(code, e.to_string())
    }
}

impl From<ResearchError> for OpError {
    fn from(e: ResearchError) -> Self {
        match e {
            ResearchError::InvalidRequest(m) => OpError::bad_request(m),
            ResearchError::Retrieval(inner) => inner.into(),
            other @ ResearchError::AllSubquestionsFailed(..) => {
                OpError::new(ErrorCode::ProviderUnavailable, other.to_string())
            }
        }
    }
}

impl From<PipelineError> for OpError {
    fn from(e: PipelineError) -> Self {
        let code = if e.is_provider_failure() {
            ErrorCode::ProviderUnavailable
        } else {
            match &e {
                PipelineError::Ingest { .. } => ErrorCode::BadRequest,
                _ => ErrorCode::Internal,
            }
        };
        OpError::new(code, e.to_string())
    }
}

pub fn answer(state: &AppState, request: &QaRequest) -> Result<QaResponse, OpError> {
    Ok(state.qa_engine().answer_query(request)?)
}

pub fn research(state: &AppState, request: &ResearchRequest) -> Result<ResearchReport, OpError> {
    Ok(state.research_engine().run_research(request)?)
}

/// Body of `POST /api/ingest`: either a manifest path readable by the
/// server or the documents themselves.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub documents: Option<Vec<RawDocument>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestStatus {
    pub job_id: String,
    pub status: JobState,
    pub report: IngestReport,
    /// Store totals after the commit.
    pub counts: StoreCounts,
    pub persisted: bool,
}

pub fn load_documents(request: &IngestRequest) -> Result<Vec<RawDocument>, OpError> {
    let manifest_err = |e: IngestError| OpError::bad_request(e.to_string());
    let docs = match (&request.manifest_path, &request.documents) {
        (Some(path), None) => load_manifest(path)
            .and_then(|m| m.load_documents())
            .map_err(manifest_err)?,
        (None, Some(docs)) => {
            for d in docs {
                d.validate().map_err(manifest_err)?;
            }
            docs.clone()
        }
        _ => return Err(OpError::bad_request("give exactly one of manifest_path or documents")),
    };
    if docs.is_empty() {
        return Err(OpError::bad_request("no documents to ingest"));
    }
    Ok(docs)
}

/// Ingests a batch and persists the store when it has a backing file.
pub fn ingest(state: &AppState, docs: &[RawDocument]) -> Result<IngestStatus, OpError> {
    let _guard = state.ingest_lock.lock().unwrap_or_else(|p| p.into_inner());
    let report = ingest_documents(
        docs,
        &state.store,
        state.providers.text.as_ref(),
        state.providers.embedder.as_ref(),
        &state.config.pipeline_options(),
    )?;
    let persisted = match &state.store_path {
        Some(path) => {
            state
                .store
                .persist(path)
                .map_err(|e| OpError::new(ErrorCode::StoreUnavailable, format!("cannot write store: {e}")))?;
            true
        }
        None => false,
    };
    Ok(IngestStatus {
        job_id: uuid::Uuid::new_v4().to_string(),
        status: JobState::Completed,
        report,
        counts: state.store.counts(),
        persisted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentInfo {
    pub doc_id: String,
    pub doc_type: DocType,
    pub metadata: DocumentMetadata,
    pub citation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

pub fn document(state: &AppState, doc_id: &str) -> Result<DocumentInfo, OpError> {
    let snapshot = state.store.snapshot();
    let (Some(meta), Some(doc_type)) = (snapshot.document(doc_id), snapshot.doc_type(doc_id)) else {
        return Err(OpError::not_found(format!("no document {doc_id:?}")));
    };
    let citation = format_citation(meta).map_err(|e| OpError::new(ErrorCode::Internal, e.to_string()))?;
    Ok(DocumentInfo {
        doc_id: doc_id.to_string(),
        doc_type,
        metadata: meta.clone(),
        citation,
        url: citation_url(meta),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderHealth {
    pub name: String,
    pub reachable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ProviderHealth {
    fn probe(name: &str, result: Result<(), ProviderError>) -> Self {
        Self {
            name: name.to_string(),
            reachable: result.is_ok(),
            error: result.err().map(|e| e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvidersHealth {
    pub text: ProviderHealth,
    pub embedding: ProviderHealth,
    pub compounds: ProviderHealth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    /// `ok` when every provider answers its probe, otherwise `degraded`.
    pub status: String,
    pub dimension: usize,
    pub counts: StoreCounts,
    pub providers: ProvidersHealth,
}

pub fn health(state: &AppState) -> Health {
    let p = &state.providers;
    let providers = ProvidersHealth {
        text: ProviderHealth::probe(p.text.name(), p.text.ping()),
        embedding: ProviderHealth::probe(p.embedder.name(), p.embedder.ping()),
        compounds: ProviderHealth::probe(p.compounds.name(), p.compounds.ping()),
    };
    let all_up = providers.text.reachable && providers.embedding.reachable && providers.compounds.reachable;
    Health {
        status: if all_up { "ok" } else { "degraded" }.into(),
        dimension: state.store.dimension(),
        counts: state.store.counts(),
        providers,
    }
}
