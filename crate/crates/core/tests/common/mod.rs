//! Shared helpers for the integration tests: fixture loading, a synthetic
//! clustered corpus, an exhaustive-scan retrieval reference and a scripted
//! text provider that routes on prompt shape.

#![allow(dead_code)]

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::sync::Mutex;

use litkb_core::enrich::EmbeddingVector;
use litkb_core::ingest::{load_manifest, DocType, DocumentMetadata, RawDocument};
use litkb_core::pipeline::{ingest_documents, IngestOptions};
use litkb_core::provider::{HashEmbedder, ProviderError, TextProvider, TextRequest};
use litkb_core::store::{ChunkIndexEntry, DocEntry, MatchKind, SearchParams, VectorStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod fixture_oracle;

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn fixture_manifest() -> PathBuf {
    fixtures_dir().join("corpus/manifest.json")
}

pub fn fixture_docs() -> Vec<RawDocument> {
    load_manifest(fixture_manifest())
        .expect("fixture manifest")
        .load_documents()
        .expect("fixture documents")
}

/// Fixture corpus ingested offline with the hash embedder.
pub fn fixture_store(dim: usize) -> VectorStore {
    let store = VectorStore::new(dim);
    ingest_documents(
        &fixture_docs(),
        &store,
        &Unconfigured,
        &HashEmbedder::new(dim),
        &IngestOptions::offline(dim),
    )
    .expect("fixture ingest");
    store
}

pub struct Unconfigured;

impl TextProvider for Unconfigured {
    fn complete(&self, _request: &TextRequest) -> Result<String, ProviderError> {
        Err(ProviderError::NotConfigured("text provider".into()))
    }

    fn name(&self) -> &str {
        "unconfigured"
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit(v: Vec<f32>) -> Vec<f32> {
    EmbeddingVector::from_raw(v).expect("non-degenerate").into_inner()
}

pub fn ev(v: &[f32]) -> EmbeddingVector {
    EmbeddingVector::from_raw(v.to_vec()).expect("non-degenerate")
}

pub fn meta(doc_id: &str, doc_type: DocType, n_authors: usize) -> DocumentMetadata {
    DocumentMetadata {
        doc_id: doc_id.into(),
        title: format!("Study {doc_id}"),
        authors: (0..n_authors).map(|i| format!("Author{i} {}", (b'A' + i as u8) as char)).collect(),
        journal: "Journal of Synthetic Results".into(),
        doi: format!("10.0000/{doc_id}"),
        year: Some(2000 + (doc_id.len() as i32 % 20)),
        doc_type,
        source_url: None,
        volume: Some("1".into()),
        issue: None,
        pages: Some("1-10".into()),
    }
}

#[derive(Debug, Clone)]
pub struct SynthDoc {
    pub id: String,
    pub doc_type: DocType,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct SynthChunk {
    pub id: String,
    pub doc: String,
    pub text: String,
    pub vector: Vec<f32>,
    pub questions: Vec<(String, Vec<f32>)>,
}

/// Random corpus whose vectors cluster around a few centres, so that
/// similarities straddle the 0.7 threshold. A few vectors are exact copies
/// of others to exercise tie-breaking.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub dim: usize,
    pub centers: Vec<Vec<f32>>,
    pub docs: Vec<SynthDoc>,
    pub chunks: Vec<SynthChunk>,
}

fn noisy(rng: &mut ChaCha8Rng, center: &[f32], amp: f32) -> Vec<f32> {
    unit(center.iter().map(|c| c + rng.random_range(-amp..amp)).collect())
}

impl SynthCorpus {
    pub fn generate(rng: &mut ChaCha8Rng, dim: usize, n_docs: usize, n_chunks: usize, max_q: usize) -> Self {
        let n_centers = 5;
        let centers: Vec<Vec<f32>> = (0..n_centers)
            .map(|_| unit((0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()))
            .collect();
        let mut doc_center = Vec::with_capacity(n_docs);
        let mut docs: Vec<SynthDoc> = Vec::with_capacity(n_docs);
        for i in 0..n_docs {
            let (c, vector) = if i > 0 && rng.random_bool(0.05) {
                let j = rng.random_range(0..i);
                (doc_center[j], docs[j].vector.clone())
            } else {
                let c = rng.random_range(0..n_centers);
                (c, noisy(rng, &centers[c], 0.15))
            };
            doc_center.push(c);
            docs.push(SynthDoc {
                id: format!("d{i:03}"),
                doc_type: if rng.random_bool(0.4) { DocType::Review } else { DocType::Research },
                vector,
            });
        }
        let mut per_doc = vec![0usize; n_docs];
        let mut chunks: Vec<SynthChunk> = Vec::with_capacity(n_chunks);
        for _ in 0..n_chunks {
            let d = rng.random_range(0..n_docs);
            per_doc[d] += 1;
            let id = format!("{}#{:04}", docs[d].id, per_doc[d]);
            let center = &centers[doc_center[d]];
            let vector = if !chunks.is_empty() && rng.random_bool(0.05) {
                chunks[rng.random_range(0..chunks.len())].vector.clone()
            } else {
                noisy(rng, center, 0.15)
            };
            let nq = rng.random_range(0..=max_q);
            let questions = (0..nq)
                .map(|k| {
                    let qv = if rng.random_bool(0.05) {
                        vector.clone()
                    } else {
                        noisy(rng, center, 0.15)
                    };
                    (format!("{id}/q{}", k + 1), qv)
                })
                .collect();
            chunks.push(SynthChunk {
                text: format!("Passage {id}: {}", "observations ".repeat(4 + d % 7)),
                id,
                doc: docs[d].id.clone(),
                vector,
                questions,
            });
        }
        Self { dim, centers, docs, chunks }
    }

    pub fn query(&self, rng: &mut ChaCha8Rng) -> Vec<f32> {
        let c = rng.random_range(0..self.centers.len());
        noisy(rng, &self.centers[c], 0.12)
    }

    pub fn entries(&self) -> Vec<(DocEntry, Vec<ChunkIndexEntry>)> {
        self.docs
            .iter()
            .map(|d| {
                let chunks = self
                    .chunks
                    .iter()
                    .filter(|c| c.doc == d.id)
                    .map(|c| ChunkIndexEntry {
                        chunk_id: c.id.clone(),
                        doc_id: c.doc.clone(),
                        heading_path: vec!["Results".into()],
                        text: c.text.clone(),
                        chunk_vector: ev(&c.vector),
                        question_vectors: c.questions.iter().map(|(id, v)| (id.clone(), ev(v))).collect(),
                    })
                    .collect();
                (
                    DocEntry {
                        doc_id: d.id.clone(),
                        abstract_vector: ev(&d.vector),
                        doc_type: d.doc_type,
                        metadata: meta(&d.id, d.doc_type, 1 + d.id.len() % 5),
                    },
                    chunks,
                )
            })
            .collect()
    }

    pub fn store(&self) -> VectorStore {
        let store = VectorStore::new(self.dim);
        store.upsert_many(self.entries()).expect("synthetic corpus is valid");
        store
    }
}

/// Exact dot product accumulated left to right in f64.
pub fn ref_dot(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += f64::from(*x) * f64::from(*y);
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefHit {
    pub chunk_id: String,
    pub doc_id: String,
    pub score: f64,
    pub kind: MatchKind,
    pub matched_id: String,
}

fn desc_then_id(a: (f64, &str), b: (f64, &str)) -> std::cmp::Ordering {
    b.0.partial_cmp(&a.0).expect("finite").then_with(|| a.1.cmp(b.1))
}

/// Exhaustive reference for the summary layer.
pub fn ref_summary(c: &SynthCorpus, q: &[f32], limit: usize, filter: Option<DocType>) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = c
        .docs
        .iter()
        .filter(|d| filter.is_none_or(|t| t == d.doc_type))
        .map(|d| (d.id.clone(), ref_dot(q, &d.vector)))
        .collect();
    all.sort_by(|a, b| desc_then_id((a.1, &a.0), (b.1, &b.0)));
    all.truncate(limit);
    all
}

/// Exhaustive reference for the chunk layer: best of chunk and question
/// vectors (chunk first on ties), strictly above `min_score`.
pub fn ref_chunks(c: &SynthCorpus, q: &[f32], allowed: &HashSet<String>, limit: usize, min_score: f64) -> Vec<RefHit> {
    let mut hits: Vec<RefHit> = Vec::new();
    for ch in c.chunks.iter().filter(|ch| allowed.contains(&ch.doc)) {
        let mut best = RefHit {
            chunk_id: ch.id.clone(),
            doc_id: ch.doc.clone(),
            score: ref_dot(q, &ch.vector),
            kind: MatchKind::Chunk,
            matched_id: ch.id.clone(),
        };
        for (qid, qv) in &ch.questions {
            let s = ref_dot(q, qv);
            if s > best.score {
                best.score = s;
                best.kind = MatchKind::Question;
                best.matched_id = qid.clone();
            }
        }
        if best.score > min_score {
            hits.push(best);
        }
    }
    hits.sort_by(|a, b| desc_then_id((a.score, &a.chunk_id), (b.score, &b.chunk_id)));
    hits.truncate(limit);
    hits
}

pub fn ref_hierarchical(c: &SynthCorpus, q: &[f32], p: &SearchParams) -> Vec<RefHit> {
    let allowed: HashSet<String> = ref_summary(c, q, p.summary_limit, p.doc_type_filter)
        .into_iter()
        .map(|(id, _)| id)
        .collect();
    ref_chunks(c, q, &allowed, p.chunk_limit, p.min_score)
}

/// Compares store hits with reference hits; returns a description of the
/// first difference.
pub fn diff_hits(got: &[litkb_core::Hit], want: &[RefHit], tol: f64) -> Option<String> {
    if got.len() != want.len() {
        return Some(format!("length {} vs reference {}", got.len(), want.len()));
    }
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        if g.chunk_id != w.chunk_id || g.doc_id != w.doc_id {
            return Some(format!("rank {i}: {} vs reference {}", g.chunk_id, w.chunk_id));
        }
        if (g.score - w.score).abs() > tol {
            return Some(format!("rank {i}: score {} vs reference {}", g.score, w.score));
        }
        if g.matched_kind != w.kind || g.matched_id != w.matched_id {
            return Some(format!("rank {i}: matched {} vs reference {}", g.matched_id, w.matched_id));
        }
    }
    None
}

/// Which pipeline stage a prompt belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptKind {
    Relevance,
    Answer,
    Overview,
    SubQuestions,
    Synthesis,
    Other,
}

pub fn classify(req: &TextRequest) -> PromptKind {
    let p = req.prompt.as_str();
    if p.starts_with("Does the following question concern") {
        PromptKind::Relevance
    } else if p.starts_with("Review passages:") {
        PromptKind::Overview
    } else if p.contains("focused sub-questions") {
        PromptKind::SubQuestions
    } else if p.contains("Synthesize the sub-answers") {
        PromptKind::Synthesis
    } else if req.system.is_some() && p.contains("\nQuestion: ") {
        PromptKind::Answer
    } else {
        PromptKind::Other
    }
}

/// Extracts the `[ref k]` numbers listed as blocks in an answer prompt.
pub fn prompt_refs(prompt: &str) -> Vec<usize> {
    let mut refs: Vec<usize> = prompt
        .lines()
        .filter_map(|l| l.strip_prefix("[ref "))
        .filter_map(|r| r.split(']').next()?.parse().ok())
        .collect();
    refs.dedup();
    refs
}

pub fn question_of(prompt: &str) -> &str {
    prompt
        .rsplit_once("\nQuestion: ")
        .map(|(_, q)| q.trim_end())
        .unwrap_or("")
}

type Handler = dyn Fn(PromptKind, &TextRequest) -> Result<String, ProviderError> + Send + Sync;

/// Text provider that dispatches on prompt kind and counts calls per kind.
pub struct Router {
    handler: Box<Handler>,
    calls: Mutex<HashMap<PromptKind, usize>>,
}

impl Router {
    pub fn new(f: impl Fn(PromptKind, &TextRequest) -> Result<String, ProviderError> + Send + Sync + 'static) -> Self {
        Self {
            handler: Box::new(f),
            calls: Mutex::new(HashMap::new()),
        }
    }

    pub fn calls(&self, kind: PromptKind) -> usize {
        self.calls.lock().unwrap().get(&kind).copied().unwrap_or(0)
    }

    pub fn total_calls(&self) -> usize {
        self.calls.lock().unwrap().values().sum()
    }
}

impl TextProvider for Router {
    fn complete(&self, request: &TextRequest) -> Result<String, ProviderError> {
        let kind = classify(request);
        *self.calls.lock().unwrap().entry(kind).or_default() += 1;
        (self.handler)(kind, request)
    }

    fn name(&self) -> &str {
        "router"
    }
}

/// Answer stub: cites every reference it was given, in prompt order.
pub fn citing_answer(req: &TextRequest) -> String {
    let refs = prompt_refs(&req.prompt);
    if refs.is_empty() {
        return "There is no knowledge-base support for this question.".into();
    }
    let cites: Vec<String> = refs.iter().map(|r| format!("[ref {r}]")).collect();
    format!("The retrieved studies address this point {}.", cites.join(" "))
}
