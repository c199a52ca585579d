//! Two-layer vector index.
//!
//! The summary layer holds one abstract vector per document. The sub-chunk
//! layer holds, for every chunk, its own vector followed by the vectors of
//! its hypothetical questions. Both layers are stored as contiguous
//! row-major `f32` matrices and searched exhaustively.
//!
//! Writers build the next state and publish it under a write lock; readers
//! take an `Arc` snapshot, so a search never sees a half-written document.

mod persist;

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enrich::{EmbeddingVector, DEFAULT_MAX_QUESTIONS};
use crate::ingest::{DocType, DocumentMetadata};

pub use persist::{LoadError, FORMAT_VERSION, MAGIC};

pub const DEFAULT_SUMMARY_LIMIT: usize = 400;
pub const DEFAULT_CHUNK_LIMIT: usize = 20;
pub const DEFAULT_MIN_SCORE: f64 = 0.7;

#[derive(Debug, Error, PartialEq)]
pub enum StoreError {
    #[error("vector dimension mismatch: store is {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid entry: {0}")]
    InvalidEntry(String),
    #[error("invalid search parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocEntry {
    pub doc_id: String,
    pub abstract_vector: EmbeddingVector,
    pub doc_type: DocType,
    pub metadata: DocumentMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkIndexEntry {
    pub chunk_id: String,
    pub doc_id: String,
    pub heading_path: Vec<String>,
    /// Cleaned chunk text, used to build prompts.
    pub text: String,
    pub chunk_vector: EmbeddingVector,
    pub question_vectors: Vec<(String, EmbeddingVector)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Chunk,
    Question,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub chunk_id: String,
    pub doc_id: String,
    pub score: f64,
    pub matched_kind: MatchKind,
    pub matched_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchParams {
    pub summary_limit: usize,
    pub chunk_limit: usize,
    pub min_score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub doc_type_filter: Option<DocType>,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            summary_limit: DEFAULT_SUMMARY_LIMIT,
            chunk_limit: DEFAULT_CHUNK_LIMIT,
            min_score: DEFAULT_MIN_SCORE,
            doc_type_filter: None,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.summary_limit < 1 {
            return Err(StoreError::InvalidParams("summary_limit must be >= 1".into()));
        }
        if self.chunk_limit < 1 {
            return Err(StoreError::InvalidParams("chunk_limit must be >= 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.min_score) {
            return Err(StoreError::InvalidParams(format!(
                "min_score {} outside [-1, 1]",
                self.min_score
            )));
        }
        Ok(())
    }
}

/// Store-wide entity counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreCounts {
    pub docs: usize,
    pub chunks: usize,
    pub questions: usize,
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// Cosine similarity; a plain dot product since vectors are unit length.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, StoreError> {
    if a.dimension() != b.dimension() {
        return Err(StoreError::Dimension {
            expected: a.dimension(),
            got: b.dimension(),
        });
    }
    Ok(dot(a.as_slice(), b.as_slice()).clamp(-1.0, 1.0))
}

fn by_score_then_id(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DocRecord {
    pub(crate) metadata: DocumentMetadata,
    pub(crate) doc_type: DocType,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ChunkRecord {
    pub(crate) chunk_id: String,
    pub(crate) doc_id: String,
    pub(crate) heading_path: Vec<String>,
    pub(crate) text: String,
    pub(crate) question_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct RowOwner {
    chunk: u32,
    /// 0 for the chunk's own vector, k for its k-th question.
    slot: u32,
}

/// An immutable view of the index. Cheap to clone via `Arc`.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreSnapshot {
    dimension: usize,
    max_questions: usize,
    docs: Vec<DocRecord>,
    summary: Vec<f32>,
    doc_pos: HashMap<String, usize>,
    chunks: Vec<ChunkRecord>,
    chunk_doc: Vec<u32>,
    chunk_pos: HashMap<String, usize>,
    rows: Vec<f32>,
    row_owner: Vec<RowOwner>,
}

impl StoreSnapshot {
    fn empty(dimension: usize, max_questions: usize) -> Self {
        Self {
            dimension,
            max_questions,
            docs: Vec::new(),
            summary: Vec::new(),
            doc_pos: HashMap::new(),
            chunks: Vec::new(),
            chunk_doc: Vec::new(),
            chunk_pos: HashMap::new(),
            rows: Vec::new(),
            row_owner: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn counts(&self) -> StoreCounts {
        StoreCounts {
            docs: self.docs.len(),
            chunks: self.chunks.len(),
            questions: self.chunks.iter().map(|c| c.question_ids.len()).sum(),
        }
    }

    pub fn document(&self, doc_id: &str) -> Option<&DocumentMetadata> {
        self.doc_pos.get(doc_id).map(|&i| &self.docs[i].metadata)
    }

    pub fn doc_type(&self, doc_id: &str) -> Option<DocType> {
        self.doc_pos.get(doc_id).map(|&i| self.docs[i].doc_type)
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().map(|d| d.metadata.doc_id.as_str())
    }

    pub fn chunk_text(&self, chunk_id: &str) -> Option<&str> {
        self.chunk_pos
            .get(chunk_id)
            .map(|&i| self.chunks[i].text.as_str())
    }

    pub fn chunk_heading_path(&self, chunk_id: &str) -> Option<&[String]> {
        self.chunk_pos
            .get(chunk_id)
            .map(|&i| self.chunks[i].heading_path.as_slice())
    }

    fn summary_row(&self, i: usize) -> &[f32] {
        &self.summary[i * self.dimension..(i + 1) * self.dimension]
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dimension..(i + 1) * self.dimension]
    }

    fn check_query(&self, qvec: &EmbeddingVector) -> Result<(), StoreError> {
        if qvec.dimension() != self.dimension {
            return Err(StoreError::Dimension {
                expected: self.dimension,
                got: qvec.dimension(),
            });
        }
        Ok(())
    }

    /// Stage one: top documents by abstract similarity, highest score first,
    /// ties by ascending doc id.
    pub fn search_summary(
        &self,
        qvec: &EmbeddingVector,
        limit: usize,
        doc_type_filter: Option<DocType>,
    ) -> Result<Vec<(String, f64)>, StoreError> {
        self.check_query(qvec)?;
        let q = qvec.as_slice();
        let mut scored: Vec<(f64, usize)> = self
            .docs
            .iter()
            .enumerate()
            .filter(|(_, d)| doc_type_filter.is_none_or(|t| d.doc_type == t))
            .map(|(i, _)| (dot(q, self.summary_row(i)), i))
            .collect();
        scored.sort_by(|a, b| {
            by_score_then_id(
                (a.0, &self.docs[a.1].metadata.doc_id),
                (b.0, &self.docs[b.1].metadata.doc_id),
            )
        });
        scored.truncate(limit);
        Ok(scored
            .into_iter()
            .map(|(s, i)| (self.docs[i].metadata.doc_id.clone(), s))
            .collect())
    }

    /// Stage two: best-matching chunks within `allowed_docs`.
    ///
    /// A chunk scores the maximum over its own vector and its question
    /// vectors (the chunk vector wins exact ties). Only scores strictly
    /// above `min_score` survive. Sorted by score descending, ties by chunk
    /// id ascending.
    pub fn search_chunks(
        &self,
        qvec: &EmbeddingVector,
        allowed_docs: &HashSet<String>,
        limit: usize,
        min_score: f64,
    ) -> Result<Vec<Hit>, StoreError> {
        self.check_query(qvec)?;
        let doc_allowed: Vec<bool> = self
            .docs
            .iter()
            .map(|d| allowed_docs.contains(&d.metadata.doc_id))
            .collect();
        let q = qvec.as_slice();
        // chunk index -> (score, slot)
        let mut best: Vec<Option<(f64, u32)>> = vec![None; self.chunks.len()];
        for (r, owner) in self.row_owner.iter().enumerate() {
            let c = owner.chunk as usize;
            if !doc_allowed[self.chunk_doc[c] as usize] {
                continue;
            }
            let score = dot(q, self.row(r));
            match best[c] {
                Some((s, _)) if s >= score => {}
                _ => best[c] = Some((score, owner.slot)),
            }
        }
        let mut hits: Vec<(f64, usize, u32)> = best
            .into_iter()
            .enumerate()
            .filter_map(|(c, b)| b.map(|(s, slot)| (s, c, slot)))
            .filter(|(s, _, _)| *s > min_score)
            .collect();
        hits.sort_by(|a, b| {
            by_score_then_id(
                (a.0, &self.chunks[a.1].chunk_id),
                (b.0, &self.chunks[b.1].chunk_id),
            )
        });
        hits.truncate(limit);
        Ok(hits
            .into_iter()
            .map(|(score, c, slot)| {
                let chunk = &self.chunks[c];
                let (matched_kind, matched_id) = if slot == 0 {
                    (MatchKind::Chunk, chunk.chunk_id.clone())
                } else {
                    (
                        MatchKind::Question,
                        chunk.question_ids[slot as usize - 1].clone(),
                    )
                };
                Hit {
                    chunk_id: chunk.chunk_id.clone(),
                    doc_id: chunk.doc_id.clone(),
                    score,
                    matched_kind,
                    matched_id,
                }
            })
            .collect())
    }

    /// Summary layer first, then the sub-chunk layer restricted to the
    /// documents it returned.
    pub fn hierarchical_search(
        &self,
        qvec: &EmbeddingVector,
        params: &SearchParams,
    ) -> Result<Vec<Hit>, StoreError> {
        params.validate()?;
        let docs: HashSet<String> = self
            .search_summary(qvec, params.summary_limit, params.doc_type_filter)?
            .into_iter()
            .map(|(id, _)| id)
            .collect();
        self.search_chunks(qvec, &docs, params.chunk_limit, params.min_score)
    }

    fn validate_upsert(&self, doc: &DocEntry, chunks: &[ChunkIndexEntry]) -> Result<(), StoreError> {
        let dim = |v: &EmbeddingVector| {
            if v.dimension() == self.dimension {
                Ok(())
            } else {
                Err(StoreError::Dimension {
                    expected: self.dimension,
                    got: v.dimension(),
                })
            }
        };
        if doc.doc_id != doc.metadata.doc_id {
            return Err(StoreError::InvalidEntry(format!(
                "doc_id {:?} differs from metadata doc_id {:?}",
                doc.doc_id, doc.metadata.doc_id
            )));
        }
        if doc.doc_type != doc.metadata.doc_type {
            return Err(StoreError::InvalidEntry(format!(
                "{}: doc_type differs from metadata",
                doc.doc_id
            )));
        }
        dim(&doc.abstract_vector)?;
        let mut ids = HashSet::new();
        for c in chunks {
            if c.doc_id != doc.doc_id {
                return Err(StoreError::InvalidEntry(format!(
                    "chunk {} belongs to {}, not {}",
                    c.chunk_id, c.doc_id, doc.doc_id
                )));
            }
            if !ids.insert(c.chunk_id.as_str()) {
                return Err(StoreError::InvalidEntry(format!("duplicate chunk id {}", c.chunk_id)));
            }
            if let Some(&i) = self.chunk_pos.get(&c.chunk_id) {
                if self.chunks[i].doc_id != doc.doc_id {
                    return Err(StoreError::InvalidEntry(format!(
                        "chunk id {} already belongs to {}",
                        c.chunk_id, self.chunks[i].doc_id
                    )));
                }
            }
            if c.question_vectors.len() > self.max_questions {
                return Err(StoreError::InvalidEntry(format!(
                    "chunk {} has {} questions, limit is {}",
                    c.chunk_id,
                    c.question_vectors.len(),
                    self.max_questions
                )));
            }
            dim(&c.chunk_vector)?;
            let mut qids = HashSet::new();
            for (qid, v) in &c.question_vectors {
                if !qids.insert(qid.as_str()) {
                    return Err(StoreError::InvalidEntry(format!("duplicate question id {qid}")));
                }
                dim(v)?;
            }
        }
        Ok(())
    }

    fn remove_doc(&mut self, doc_id: &str) {
        let Some(pos) = self.doc_pos.remove(doc_id) else {
            return;
        };
        let dim = self.dimension;
        self.docs.remove(pos);
        self.summary.drain(pos * dim..(pos + 1) * dim);
        for (i, d) in self.docs.iter().enumerate().skip(pos) {
            self.doc_pos.insert(d.metadata.doc_id.clone(), i);
        }

        let mut remap: Vec<Option<u32>> = Vec::with_capacity(self.chunks.len());
        let mut kept = 0u32;
        for c in &self.chunks {
            if c.doc_id == doc_id {
                remap.push(None);
            } else {
                remap.push(Some(kept));
                kept += 1;
            }
        }
        let old_chunks = std::mem::take(&mut self.chunks);
        let old_chunk_doc = std::mem::take(&mut self.chunk_doc);
        for (c, d) in old_chunks.into_iter().zip(old_chunk_doc) {
            if c.doc_id != doc_id {
                let d = if d as usize > pos { d - 1 } else { d };
                self.chunks.push(c);
                self.chunk_doc.push(d);
            }
        }
        self.chunk_pos = self
            .chunks
            .iter()
            .enumerate()
            .map(|(i, c)| (c.chunk_id.clone(), i))
            .collect();

        let old_rows = std::mem::take(&mut self.rows);
        let old_owner = std::mem::take(&mut self.row_owner);
        for (r, owner) in old_owner.into_iter().enumerate() {
            if let Some(c) = remap[owner.chunk as usize] {
                self.rows.extend_from_slice(&old_rows[r * dim..(r + 1) * dim]);
                self.row_owner.push(RowOwner { chunk: c, slot: owner.slot });
            }
        }
    }

    fn insert(&mut self, doc: DocEntry, chunks: Vec<ChunkIndexEntry>) {
        self.remove_doc(&doc.doc_id);
        let doc_index = self.docs.len();
        self.doc_pos.insert(doc.doc_id.clone(), doc_index);
        self.summary.extend_from_slice(doc.abstract_vector.as_slice());
        self.docs.push(DocRecord {
            metadata: doc.metadata,
            doc_type: doc.doc_type,
        });
        for c in chunks {
            let ci = self.chunks.len() as u32;
            self.rows.extend_from_slice(c.chunk_vector.as_slice());
            self.row_owner.push(RowOwner { chunk: ci, slot: 0 });
            let mut question_ids = Vec::with_capacity(c.question_vectors.len());
            for (k, (qid, v)) in c.question_vectors.into_iter().enumerate() {
                self.rows.extend_from_slice(v.as_slice());
                self.row_owner.push(RowOwner {
                    chunk: ci,
                    slot: k as u32 + 1,
                });
                question_ids.push(qid);
            }
            self.chunk_pos.insert(c.chunk_id.clone(), ci as usize);
            self.chunks.push(ChunkRecord {
                chunk_id: c.chunk_id,
                doc_id: c.doc_id,
                heading_path: c.heading_path,
                text: c.text,
                question_ids,
            });
            self.chunk_doc.push(doc_index as u32);
        }
    }
}

/// Thread-safe handle to the index.
#[derive(Debug)]
pub struct VectorStore {
    current: RwLock<Arc<StoreSnapshot>>,
}

impl VectorStore {
    pub fn new(dimension: usize) -> Self {
        Self::with_max_questions(dimension, DEFAULT_MAX_QUESTIONS)
    }

    pub fn with_max_questions(dimension: usize, max_questions: usize) -> Self {
        Self::from_snapshot(StoreSnapshot::empty(dimension, max_questions))
    }

    fn from_snapshot(snapshot: StoreSnapshot) -> Self {
        Self {
            current: RwLock::new(Arc::new(snapshot)),
        }
    }

    /// The current committed state; unaffected by later writes.
    pub fn snapshot(&self) -> Arc<StoreSnapshot> {
        Arc::clone(&self.current.read().expect("store lock poisoned"))
    }

    pub fn dimension(&self) -> usize {
        self.snapshot().dimension
    }

    pub fn counts(&self) -> StoreCounts {
        self.snapshot().counts()
    }

    /// Inserts or replaces a document and all of its chunks.
    pub fn upsert(&self, doc: DocEntry, chunks: Vec<ChunkIndexEntry>) -> Result<(), StoreError> {
        self.upsert_many(vec![(doc, chunks)])
    }

    /// Commits several documents at once; any invalid entry rejects the
    /// whole batch and leaves the store unchanged.
    pub fn upsert_many(&self, batch: Vec<(DocEntry, Vec<ChunkIndexEntry>)>) -> Result<(), StoreError> {
        let mut guard = self.current.write().expect("store lock poisoned");
        let mut seen = HashSet::new();
        for (doc, chunks) in &batch {
            guard.validate_upsert(doc, chunks)?;
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(StoreError::InvalidEntry(format!(
                    "doc {} appears twice in one batch",
                    doc.doc_id
                )));
            }
        }
        let mut claimed: HashMap<&str, &str> = HashMap::new();
        for (doc, chunks) in &batch {
            for c in chunks {
                if let Some(other) = claimed.insert(c.chunk_id.as_str(), doc.doc_id.as_str()) {
                    return Err(StoreError::InvalidEntry(format!(
                        "chunk id {} claimed by {} and {}",
                        c.chunk_id, other, doc.doc_id
                    )));
                }
            }
        }
        // Copy-on-write: readers holding the old Arc keep their view.
        let next = Arc::make_mut(&mut guard);
        for (doc, chunks) in batch {
            next.insert(doc, chunks);
        }
        Ok(())
    }

    pub fn search_summary(
        &self,
        qvec: &EmbeddingVector,
        limit: usize,
        doc_type_filter: Option<DocType>,
    ) -> Result<Vec<(String, f64)>, StoreError> {
        self.snapshot().search_summary(qvec, limit, doc_type_filter)
    }

    pub fn search_chunks(
        &self,
        qvec: &EmbeddingVector,
        allowed_docs: &HashSet<String>,
        limit: usize,
        min_score: f64,
    ) -> Result<Vec<Hit>, StoreError> {
        self.snapshot().search_chunks(qvec, allowed_docs, limit, min_score)
    }

    pub fn hierarchical_search(
        &self,
        qvec: &EmbeddingVector,
        params: &SearchParams,
    ) -> Result<Vec<Hit>, StoreError> {
        self.snapshot().hierarchical_search(qvec, params)
    }
}
