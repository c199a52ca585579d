//! Expert question answering: relevance gate, compound lookup, hierarchical
//! retrieval, per-document citations, prompt assembly and answer generation.
//!
//! A response is an ordered list of events. Molecules (when any) come
//! first, then the citation list, then the answer, so a client can show
//! source metadata before the answer text arrives.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enrich::{embed_texts, EnrichError};
use crate::ingest::format_citation;
use crate::provider::{
    CompoundProvider, EmbeddingProvider, MoleculeRecord, ProviderError, TextProvider, TextRequest,
};
use crate::store::{Hit, SearchParams, StoreError, StoreSnapshot, VectorStore};

pub const MAX_QUERY_CHARS: usize = 8000;
pub const DEFAULT_PROMPT_BUDGET: usize = 24_000;
pub const DEFAULT_MAX_COMPOUNDS: usize = 10;
/// Retrieved passages at least this long are scrubbed from answers if the
/// model copies them verbatim.
const VERBATIM_MIN_CHARS: usize = 80;

pub const NO_SUPPORT_NOTICE: &str = "No passages from the knowledge base matched this question. \
Begin your answer by stating that it has no knowledge-base support, then answer from general knowledge.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaConfig {
    pub prompt_budget: usize,
    pub max_compounds: usize,
    pub relevance_topic: String,
    pub dimension: usize,
    pub embed_batch: usize,
}

impl Default for QaConfig {
    fn default() -> Self {
        Self {
            prompt_budget: DEFAULT_PROMPT_BUDGET,
            max_compounds: DEFAULT_MAX_COMPOUNDS,
            relevance_topic: "terpenoids or other natural-product molecules".into(),
            dimension: crate::enrich::DEFAULT_DIMENSION,
            embed_batch: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRequest {
    pub query: String,
    #[serde(default)]
    pub params: SearchParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

impl QaRequest {
    pub fn new(query: impl Into<String>) -> Self {
        Self {
            query: query.into(),
            params: SearchParams::default(),
            session_id: None,
        }
    }

    pub fn validate(&self) -> Result<(), QaError> {
        let len = self.query.chars().count();
        if self.query.trim().is_empty() {
            return Err(QaError::InvalidRequest("query is empty".into()));
        }
        if len > MAX_QUERY_CHARS {
            return Err(QaError::InvalidRequest(format!(
                "query has {len} characters, limit is {MAX_QUERY_CHARS}"
            )));
        }
        self.params
            .validate()
            .map_err(|e| QaError::InvalidRequest(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Citation {
    pub ref_index: usize,
    pub doc_id: String,
    pub formatted: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "lowercase")]
pub enum QaEvent {
    Molecules(Vec<MoleculeRecord>),
    Citations(Vec<Citation>),
    Answer(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub events: Vec<QaEvent>,
    pub answer_text: String,
    pub citations: Vec<Citation>,
    pub molecules: Vec<MoleculeRecord>,
    pub trace: Vec<Hit>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Retrieval and metadata computed before the answer call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialResponse {
    pub citations: Vec<Citation>,
    pub molecules: Vec<MoleculeRecord>,
    pub trace: Vec<Hit>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum QaError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("query embedding failed: {0}")]
    Embedding(#[from] EnrichError),
    #[error("retrieval failed: {0}")]
    Store(#[from] StoreError),
    #[error("answer generation failed: {source}")]
    Answer {
        partial: Box<PartialResponse>,
        #[source]
        source: ProviderError,
    },
}

impl QaError {
    /// True when the failure came from a provider and not from the caller.
    pub fn is_provider_failure(&self) -> bool {
        matches!(self, QaError::Answer { .. })
            || matches!(self, QaError::Embedding(EnrichError::Provider(_)))
    }
}

/// First word of the reply decides: "yes" means relevant, anything else not.
pub fn parse_yes_no(reply: &str) -> bool {
    reply
        .split(|c: char| !c.is_alphanumeric())
        .find(|w| !w.is_empty())
        .is_some_and(|w| w.eq_ignore_ascii_case("yes"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relevance {
    pub relevant: bool,
    pub warning: Option<String>,
}

pub fn assess_relevance(query: &str, topic: &str, text_llm: &dyn TextProvider) -> Relevance {
    let prompt = format!(
        "Does the following question concern {topic}, such that looking up specific \
         molecules in a compound database would help answer it?\n\
         Reply with exactly one word: yes or no.\n\nQuestion: {query}"
    );
    match text_llm.complete(&TextRequest::new(prompt)) {
        Ok(reply) => Relevance {
            relevant: parse_yes_no(&reply),
            warning: None,
        },
        Err(e) => Relevance {
            relevant: false,
            warning: Some(format!("relevance check failed, compound lookup skipped: {e}")),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CompoundLookup {
    pub molecules: Vec<MoleculeRecord>,
    pub warning: Option<String>,
}

/// At most `cap` records with non-empty SMILES. Client failures degrade to
/// an empty list with a warning.
pub fn lookup_compounds(query: &str, client: &dyn CompoundProvider, cap: usize) -> CompoundLookup {
    match client.lookup(query) {
        Ok(records) => CompoundLookup {
            molecules: records
                .into_iter()
                .filter(|r| !r.smiles.trim().is_empty())
                .take(cap)
                .collect(),
            warning: None,
        },
        Err(e) => CompoundLookup {
            molecules: Vec::new(),
            warning: Some(format!("compound lookup failed: {e}")),
        },
    }
}

/// Link for a document: its source URL, else a DOI resolver link.
pub fn citation_url(meta: &crate::ingest::DocumentMetadata) -> Option<String> {
    meta.source_url.clone().or_else(|| {
        let doi = meta.doi.trim();
        (!doi.is_empty()).then(|| format!("https://doi.org/{doi}"))
    })
}

/// One citation per document, numbered from 1 by first appearance in `hits`.
pub fn build_citations(hits: &[Hit], snapshot: &StoreSnapshot) -> Vec<Citation> {
    let mut citations: Vec<Citation> = Vec::new();
    for hit in hits {
        if citations.iter().any(|c| c.doc_id == hit.doc_id) {
            continue;
        }
        let (formatted, url) = match snapshot.document(&hit.doc_id) {
            Some(meta) => (
                format_citation(meta).unwrap_or_else(|_| hit.doc_id.clone()),
                citation_url(meta),
            ),
            None => (hit.doc_id.clone(), None),
        };
        citations.push(Citation {
            ref_index: citations.len() + 1,
            doc_id: hit.doc_id.clone(),
            formatted,
            url,
        });
    }
    citations
}

const ANSWER_SYSTEM: &str = "You are a careful scientific assistant. Ground every claim in \
the numbered references you are given and cite them as [ref k].";

fn prompt_tail(query: &str, has_context: bool) -> String {
    let mut tail = String::new();
    if has_context {
        tail.push_str(
            "\nInstructions: Answer using the reference passages above. Cite supporting \
             references inline by their number, for example [ref 1]. Cite only references \
             listed above. Summarize the passages in your own words; do not copy them verbatim.\n",
        );
    } else {
        tail.push_str("\nInstructions: ");
        tail.push_str(NO_SUPPORT_NOTICE);
        tail.push('\n');
    }
    tail.push_str("\nQuestion: ");
    tail.push_str(query);
    tail.push('\n');
    tail
}

const PROMPT_HEAD: &str = "Reference passages:\n";

/// Assembles the answer prompt.
///
/// Each hit becomes `[ref k] <citation> :: <chunk text>` where `k` is the
/// citation number of the hit's document. Blocks keep hit order. While the
/// prompt is longer than `budget` characters the lowest-scored block is
/// dropped; the top-scored block is always kept. With no hits the prompt
/// carries an explicit no-support instruction instead.
pub fn build_prompt(
    query: &str,
    hits: &[Hit],
    chunk_texts: &HashMap<String, String>,
    citations: &[Citation],
    budget: usize,
) -> String {
    let by_doc: HashMap<&str, &Citation> =
        citations.iter().map(|c| (c.doc_id.as_str(), c)).collect();
    let blocks: Vec<(usize, f64, String)> = hits
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            let citation = by_doc.get(h.doc_id.as_str())?;
            let text = chunk_texts.get(&h.chunk_id)?;
            Some((
                i,
                h.score,
                format!("[ref {}] {} :: {}\n", citation.ref_index, citation.formatted, text.trim()),
            ))
        })
        .collect();
    if blocks.is_empty() {
        return prompt_tail(query, false);
    }

    let tail = prompt_tail(query, true);
    let len = |s: &str| s.chars().count();
    let mut total = len(PROMPT_HEAD) + len(&tail) + blocks.iter().map(|b| len(&b.2)).sum::<usize>();
    // eviction order: lowest score first, later hit first among equal scores
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    order.sort_by(|&a, &b| {
        blocks[a]
            .1
            .total_cmp(&blocks[b].1)
            .then_with(|| blocks[b].0.cmp(&blocks[a].0))
    });
    let mut kept = vec![true; blocks.len()];
    for &victim in order.iter().take(blocks.len() - 1) {
        if total <= budget {
            break;
        }
        kept[victim] = false;
        total -= len(&blocks[victim].2);
    }

    let mut prompt = String::from(PROMPT_HEAD);
    for (b, keep) in blocks.iter().zip(&kept) {
        if *keep {
            prompt.push_str(&b.2);
        }
    }
    prompt.push_str(&tail);
    prompt
}

/// Replaces verbatim copies of long retrieved passages with their ref marker.
fn scrub_verbatim(answer: &str, hits: &[Hit], chunk_texts: &HashMap<String, String>, citations: &[Citation]) -> (String, bool) {
    let mut out = answer.to_string();
    let mut changed = false;
    for hit in hits {
        let Some(text) = chunk_texts.get(&hit.chunk_id) else {
            continue;
        };
        let text = text.trim();
        if text.chars().count() < VERBATIM_MIN_CHARS || !out.contains(text) {
            continue;
        }
        let marker = citations
            .iter()
            .find(|c| c.doc_id == hit.doc_id)
            .map(|c| format!("[ref {}]", c.ref_index))
            .unwrap_or_default();
        out = out.replace(text, &marker);
        changed = true;
    }
    (out, changed)
}

/// Providers and store shared by the orchestrators.
#[derive(Clone)]
pub struct QaDeps {
    pub store: Arc<VectorStore>,
    pub text: Arc<dyn TextProvider>,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub compounds: Arc<dyn CompoundProvider>,
}

/// Output of the retrieval half of the pipeline.
#[derive(Debug, Clone)]
pub struct Retrieval {
    pub hits: Vec<Hit>,
    pub citations: Vec<Citation>,
    pub chunk_texts: HashMap<String, String>,
}

#[derive(Clone)]
pub struct QaEngine {
    deps: QaDeps,
    config: QaConfig,
}

impl QaEngine {
    pub fn new(deps: QaDeps, config: QaConfig) -> Self {
        Self { deps, config }
    }

    pub fn deps(&self) -> &QaDeps {
        &self.deps
    }

    pub fn config(&self) -> &QaConfig {
        &self.config
    }

    /// Embeds `query` and runs hierarchical search on the current snapshot.
    pub fn retrieve(&self, query: &str, params: &SearchParams) -> Result<Retrieval, QaError> {
        let qvec = self.embed_query(query)?;
        self.retrieve_with(&qvec, params)
    }

    fn embed_query(&self, query: &str) -> Result<crate::enrich::EmbeddingVector, QaError> {
        let mut v = embed_texts(
            &[query.to_string()],
            self.deps.embedder.as_ref(),
            self.config.dimension,
            self.config.embed_batch,
        )?;
        Ok(v.remove(0))
    }

    fn retrieve_with(
        &self,
        qvec: &crate::enrich::EmbeddingVector,
        params: &SearchParams,
    ) -> Result<Retrieval, QaError> {
        let snapshot = self.deps.store.snapshot();
        let hits = snapshot.hierarchical_search(qvec, params)?;
        let citations = build_citations(&hits, &snapshot);
        let chunk_texts = hits
            .iter()
            .filter_map(|h| {
                snapshot
                    .chunk_text(&h.chunk_id)
                    .map(|t| (h.chunk_id.clone(), t.to_string()))
            })
            .collect();
        Ok(Retrieval {
            hits,
            citations,
            chunk_texts,
        })
    }

    /// Runs the full expert pipeline for one request.
    pub fn answer_query(&self, request: &QaRequest) -> Result<QaResponse, QaError> {
        request.validate()?;
        let mut warnings = Vec::new();

        let relevance = assess_relevance(
            &request.query,
            &self.config.relevance_topic,
            self.deps.text.as_ref(),
        );
        warnings.extend(relevance.warning);

        // Compound lookup and query embedding are independent once the
        // relevance gate has run.
        let (compounds, qvec) = std::thread::scope(|s| {
            let lookup = relevance.relevant.then(|| {
                s.spawn(|| {
                    lookup_compounds(
                        &request.query,
                        self.deps.compounds.as_ref(),
                        self.config.max_compounds,
                    )
                })
            });
            let qvec = self.embed_query(&request.query);
            let compounds = lookup
                .map(|h| h.join().expect("compound lookup panicked"))
                .unwrap_or_default();
            (compounds, qvec)
        });
        warnings.extend(compounds.warning);
        let molecules = compounds.molecules;

        let retrieval = self.retrieve_with(&qvec?, &request.params)?;
        let prompt = build_prompt(
            &request.query,
            &retrieval.hits,
            &retrieval.chunk_texts,
            &retrieval.citations,
            self.config.prompt_budget,
        );
        let answer = match self
            .deps
            .text
            .complete(&TextRequest::new(prompt).with_system(ANSWER_SYSTEM))
        {
            Ok(a) => a,
            Err(source) => {
                return Err(QaError::Answer {
                    partial: Box::new(PartialResponse {
                        citations: retrieval.citations,
                        molecules,
                        trace: retrieval.hits,
                        warnings,
                    }),
                    source,
                })
            }
        };
        let (answer_text, scrubbed) = scrub_verbatim(
            &answer,
            &retrieval.hits,
            &retrieval.chunk_texts,
            &retrieval.citations,
        );
        if scrubbed {
            warnings.push("verbatim source passages were removed from the answer".into());
        }

        let mut events = Vec::with_capacity(3);
        if !molecules.is_empty() {
            events.push(QaEvent::Molecules(molecules.clone()));
        }
        events.push(QaEvent::Citations(retrieval.citations.clone()));
        events.push(QaEvent::Answer(answer_text.clone()));

        Ok(QaResponse {
            session_id: request.session_id.clone(),
            events,
            answer_text,
            citations: retrieval.citations,
            molecules,
            trace: retrieval.hits,
            warnings,
        })
    }
}
