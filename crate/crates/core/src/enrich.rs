//! Hypothetical-question generation and embedding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Chunk;
use crate::provider::{EmbeddingProvider, ProviderError, TextProvider, TextRequest};

pub const DEFAULT_DIMENSION: usize = 2048;
pub const DEFAULT_MAX_QUESTIONS: usize = 4;
/// Texts longer than this many characters are cut and only the first part
/// is embedded.
pub const EMBED_CHAR_LIMIT: usize = 8000;
const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EnrichError {
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("text #{0} is empty")]
    EmptyText(usize),
    #[error("vector cannot be normalized: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl EnrichError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EnrichError::Provider(p) if p.is_retryable())
    }
}

/// A unit-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Normalizes `values` to unit length.
    pub fn from_raw(values: Vec<f32>) -> Result<Self, EnrichError> {
        if values.is_empty() {
            return Err(EnrichError::Degenerate("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EnrichError::Degenerate("non-finite component".into()));
        }
        let norm = values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            return Err(EnrichError::Degenerate("zero vector".into()));
        }
        Ok(Self(
            values.iter().map(|&v| (f64::from(v) / norm) as f32).collect(),
        ))
    }

    /// Wraps values that are already unit length, keeping their bits.
    pub(crate) fn from_unit(values: Vec<f32>) -> Result<Self, EnrichError> {
        let norm = values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE * 10.0 {
            return Err(EnrichError::Degenerate(format!("norm {norm} is not 1")));
        }
        Ok(Self(values))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = EnrichError;

    /// Keeps the bits of vectors that are already unit length so a
    /// serialize/deserialize round trip is exact.
    fn try_from(values: Vec<f32>) -> Result<Self, Self::Error> {
        match Self::from_unit(values.clone()) {
            Ok(v) if v.0.iter().all(|x| x.is_finite()) => Ok(v),
            _ => Self::from_raw(values),
        }
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypotheticalQuestion {
    pub question_id: String,
    pub chunk_id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Abstract,
    Chunk,
    Question,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub vector: EmbeddingVector,
    pub kind: RecordKind,
    pub target_id: String,
    pub doc_id: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GeneratedQuestions {
    pub questions: Vec<HypotheticalQuestion>,
    pub warning: Option<String>,
}

fn question_prompt(chunk: &Chunk, max_q: usize) -> String {
    format!(
        "Write up to {max_q} distinct questions that the passage below answers. \
         Each question must be self-contained and answerable from the passage alone. \
         Output one question per line with no numbering or extra text.\n\n\
         Section: {}\nPassage:\n{}",
        chunk.heading_path.join(" > "),
        chunk.text
    )
}

pub(crate) fn strip_list_marker(line: &str) -> &str {
    let line = line.trim();
    let line = line
        .strip_prefix("- ")
        .or_else(|| line.strip_prefix("* "))
        .unwrap_or(line);
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        if let Some(rest) = line[digits..]
            .strip_prefix(". ")
            .or_else(|| line[digits..].strip_prefix(") "))
        {
            return rest.trim();
        }
    }
    line
}

/// Asks the provider for up to `max_q` questions answered by `chunk`.
///
/// One question per output line, blank lines dropped, surplus truncated.
/// Ids are `<chunk_id>/q1`, `/q2`, ... A provider failure yields no
/// questions and a warning; the chunk stays retrievable through its own
/// vector.
pub fn generate_questions(
    chunk: &Chunk,
    text_llm: &dyn TextProvider,
    max_q: usize,
) -> GeneratedQuestions {
    let max_q = max_q.max(1);
    let reply = match text_llm.complete(&TextRequest::new(question_prompt(chunk, max_q))) {
        Ok(r) => r,
        Err(e) => {
            return GeneratedQuestions {
                questions: Vec::new(),
                warning: Some(format!("{}: question generation failed: {e}", chunk.chunk_id)),
            }
        }
    };
    let questions: Vec<HypotheticalQuestion> = reply
        .lines()
        .map(strip_list_marker)
        .filter(|l| !l.is_empty())
        .take(max_q)
        .enumerate()
        .map(|(i, text)| HypotheticalQuestion {
            question_id: format!("{}/q{}", chunk.chunk_id, i + 1),
            chunk_id: chunk.chunk_id.clone(),
            text: text.to_string(),
        })
        .collect();
    let warning = questions
        .is_empty()
        .then(|| format!("{}: provider produced no questions", chunk.chunk_id));
    GeneratedQuestions { questions, warning }
}

fn embeddable(text: &str) -> String {
    match text.char_indices().nth(EMBED_CHAR_LIMIT) {
        Some((cut, _)) => text[..cut].to_string(),
        None => text.to_string(),
    }
}

/// Embeds `texts` in batches, returning unit vectors in input order.
pub fn embed_texts(
    texts: &[String],
    embedder: &dyn EmbeddingProvider,
    dimension: usize,
    batch_size: usize,
) -> Result<Vec<EmbeddingVector>, EnrichError> {
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(EnrichError::EmptyText(i));
    }
    let prepared: Vec<String> = texts.iter().map(|t| embeddable(t)).collect();
    let batches: Vec<Vec<EmbeddingVector>> = prepared
        .par_chunks(batch_size.max(1))
        .map(|batch| {
            let raw = embedder.embed(batch)?;
            if raw.len() != batch.len() {
                return Err(EnrichError::Provider(ProviderError::InvalidResponse(format!(
                    "expected {} vectors, got {}",
                    batch.len(),
                    raw.len()
                ))));
            }
            raw.into_iter()
                .map(|v| {
                    if v.len() != dimension {
                        return Err(EnrichError::Dimension {
                            expected: dimension,
                            got: v.len(),
                        });
                    }
                    EmbeddingVector::from_raw(v)
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    Ok(batches.into_iter().flatten().collect())
}
