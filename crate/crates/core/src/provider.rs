//! Provider abstractions for text generation, embeddings and compound lookup.
//!
//! Every stage that talks to a model goes through one of the traits here, so
//! the whole pipeline can run against deterministic stubs in tests and
//! against network clients in production.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Failure reported by any provider.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider timed out")]
    Timeout,
    #[error("provider returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("invalid provider response: {0}")]
    InvalidResponse(String),
    #[error("provider not configured: {0}")]
    NotConfigured(String),
}

impl ProviderError {
    /// Transport-level failures that may succeed on a later attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Transport(_) | ProviderError::Timeout => true,
            ProviderError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// A single completion request.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRequest {
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
}

impl TextRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            system: None,
        }
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system = Some(system.into());
        self
    }
}

pub trait TextProvider: Send + Sync {
    fn complete(&self, request: &TextRequest) -> Result<String, ProviderError>;

    /// Identifier used in logs and eval transcripts.
    fn name(&self) -> &str {
        "text"
    }

    /// Cheap reachability probe for health reporting.
    fn ping(&self) -> Result<(), ProviderError> {
        Ok(())
    }
}

pub trait EmbeddingProvider: Send + Sync {
    /// Returns one raw (not necessarily normalized) vector per input text.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError>;

    fn name(&self) -> &str {
        "embedding"
    }

    fn ping(&self) -> Result<(), ProviderError> {
        Ok(())
    }
}

/// A molecule returned by a compound database.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoleculeRecord {
    pub name: String,
    pub smiles: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail_url: Option<String>,
}

pub trait CompoundProvider: Send + Sync {
    fn lookup(&self, query: &str) -> Result<Vec<MoleculeRecord>, ProviderError>;

    fn name(&self) -> &str {
        "compound"
    }

    fn ping(&self) -> Result<(), ProviderError> {
        Ok(())
    }
}

impl<T: TextProvider + ?Sized> TextProvider for std::sync::Arc<T> {
    fn complete(&self, request: &TextRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }
    fn name(&self) -> &str {
        (**self).name()
    }
    fn ping(&self) -> Result<(), ProviderError> {
        (**self).ping()
    }
}

impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for std::sync::Arc<T> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        (**self).embed(texts)
    }
    fn name(&self) -> &str {
        (**self).name()
    }
    fn ping(&self) -> Result<(), ProviderError> {
        (**self).ping()
    }
}

impl<T: CompoundProvider + ?Sized> CompoundProvider for std::sync::Arc<T> {
    fn lookup(&self, query: &str) -> Result<Vec<MoleculeRecord>, ProviderError> {
        (**self).lookup(query)
    }
    fn name(&self) -> &str {
        (**self).name()
    }
    fn ping(&self) -> Result<(), ProviderError> {
        (**self).ping()
    }
}

// ---------------------------------------------------------------------------
// Deterministic embedder

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// splitmix64 generator; `next` advances the state and returns one output.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform value in [-1, 1] from the top 53 bits.
    pub fn next_signed_unit(&mut self) -> f64 {
        let unit = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        unit * 2.0 - 1.0
    }
}

/// Offline embedder: seeds splitmix64 with the FNV-1a hash of the text and
/// fills a vector of the configured dimension, then normalizes it.
///
/// Vectors are reproducible across processes and platforms.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self { dimension }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn vector_for(&self, text: &str) -> Vec<f32> {
        let mut rng = SplitMix64::new(fnv1a64(text.as_bytes()));
        let raw: Vec<f64> = (0..self.dimension).map(|_| rng.next_signed_unit()).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        raw.iter().map(|v| (v / norm) as f32).collect()
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        Ok(texts.iter().map(|t| self.vector_for(t)).collect())
    }

    fn name(&self) -> &str {
        "hash"
    }
}

// ---------------------------------------------------------------------------
// Text stubs

/// Wraps a closure as a text provider.
pub struct FnTextProvider<F> {
    name: String,
    f: F,
}

impl<F> FnTextProvider<F>
where
    F: Fn(&TextRequest) -> Result<String, ProviderError> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            name: name.into(),
            f,
        }
    }
}

impl<F> TextProvider for FnTextProvider<F>
where
    F: Fn(&TextRequest) -> Result<String, ProviderError> + Send + Sync,
{
    fn complete(&self, request: &TextRequest) -> Result<String, ProviderError> {
        (self.f)(request)
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// Always returns the same completion.
#[derive(Debug, Clone)]
pub struct FixedTextProvider {
    reply: Result<String, ProviderError>,
}

impl FixedTextProvider {
    pub fn ok(reply: impl Into<String>) -> Self {
        Self {
            reply: Ok(reply.into()),
        }
    }

    pub fn failing(err: ProviderError) -> Self {
        Self { reply: Err(err) }
    }
}

impl TextProvider for FixedTextProvider {
    fn complete(&self, _request: &TextRequest) -> Result<String, ProviderError> {
        self.reply.clone()
    }

    fn name(&self) -> &str {
        "fixed"
    }
}

/// Echoes the prompt back. Useful as an identity cleaner.
#[derive(Debug, Clone, Default)]
pub struct EchoTextProvider;

impl TextProvider for EchoTextProvider {
    fn complete(&self, request: &TextRequest) -> Result<String, ProviderError> {
        Ok(request.prompt.clone())
    }

    fn name(&self) -> &str {
        "echo"
    }
}

/// Counts calls on an inner provider.
pub struct CountingTextProvider<P> {
    inner: P,
    calls: AtomicUsize,
}

impl<P: TextProvider> CountingTextProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<P: TextProvider> TextProvider for CountingTextProvider<P> {
    fn complete(&self, request: &TextRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

/// Pops replies from a queue; errors once exhausted.
pub struct ScriptedTextProvider {
    replies: Mutex<std::collections::VecDeque<Result<String, ProviderError>>>,
}

impl ScriptedTextProvider {
    pub fn new(replies: impl IntoIterator<Item = Result<String, ProviderError>>) -> Self {
        Self {
            replies: Mutex::new(replies.into_iter().collect()),
        }
    }
}

impl TextProvider for ScriptedTextProvider {
    fn complete(&self, _request: &TextRequest) -> Result<String, ProviderError> {
        self.replies
            .lock()
            .expect("script lock poisoned")
            .pop_front()
            .unwrap_or_else(|| Err(ProviderError::InvalidResponse("script exhausted".into())))
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

// ---------------------------------------------------------------------------
// Compound lookup

#[derive(Debug, Clone, PartialEq, Eq)]
struct FixtureCompound {
    record: MoleculeRecord,
    keywords: Vec<String>,
}

/// Compound provider backed by a local tab-separated table.
///
/// Columns: `name`, `smiles`, `url`, `keywords` (semicolon separated, may be
/// empty). Lines starting with `#` and a header line starting with `name`
/// are skipped. A record matches when any of its keywords, or its name if
/// it has none, occurs case-insensitively as a word in the query.
#[derive(Debug, Clone, Default)]
pub struct FixtureCompoundProvider {
    entries: Vec<FixtureCompound>,
}

impl FixtureCompoundProvider {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| {
            ProviderError::NotConfigured(format!("{}: {e}", path.as_ref().display()))
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ProviderError> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let trimmed = line.trim_end();
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = trimmed.split('\t').collect();
            if lineno == 0 && cols[0].eq_ignore_ascii_case("name") {
                continue;
            }
            if cols.len() < 2 || cols[1].trim().is_empty() {
                return Err(ProviderError::InvalidResponse(format!(
                    "compound table line {}: expected name<TAB>smiles",
                    lineno + 1
                )));
            }
            let detail_url = cols
                .get(2)
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(str::to_string);
            let mut keywords: Vec<String> = cols
                .get(3)
                .map(|s| {
                    s.split(';')
                        .map(|k| k.trim().to_lowercase())
                        .filter(|k| !k.is_empty())
                        .collect()
                })
                .unwrap_or_default();
            if keywords.is_empty() {
                keywords.push(cols[0].trim().to_lowercase());
            }
            entries.push(FixtureCompound {
                record: MoleculeRecord {
                    name: cols[0].trim().to_string(),
                    smiles: cols[1].trim().to_string(),
                    detail_url,
                },
                keywords,
            });
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn contains_word(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    haystack.match_indices(needle).any(|(start, _)| {
        let before = haystack[..start].chars().next_back();
        let after = haystack[start + needle.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

impl CompoundProvider for FixtureCompoundProvider {
    fn lookup(&self, query: &str) -> Result<Vec<MoleculeRecord>, ProviderError> {
        let query = query.to_lowercase();
        Ok(self
            .entries
            .iter()
            .filter(|e| e.keywords.iter().any(|k| contains_word(&query, k)))
            .map(|e| e.record.clone())
            .collect())
    }

    fn name(&self) -> &str {
        "fixture"
    }
}

/// Compound provider that always fails; stands in for an unreachable service.
#[derive(Debug, Clone)]
pub struct UnavailableCompoundProvider;

impl CompoundProvider for UnavailableCompoundProvider {
    fn lookup(&self, _query: &str) -> Result<Vec<MoleculeRecord>, ProviderError> {
        Err(ProviderError::Transport("compound service unreachable".into()))
    }

    fn ping(&self) -> Result<(), ProviderError> {
        Err(ProviderError::Transport("compound service unreachable".into()))
    }
}

/// Compound provider with no data.
#[derive(Debug, Clone, Default)]
pub struct NoCompounds;

impl CompoundProvider for NoCompounds {
    fn lookup(&self, _query: &str) -> Result<Vec<MoleculeRecord>, ProviderError> {
        Ok(Vec::new())
    }

    fn name(&self) -> &str {
        "none"
    }
}

/// Embedder returning caller-provided vectors by exact text, falling back to
/// [`HashEmbedder`] for unknown text.
pub struct LookupEmbedder {
    table: HashMap<String, Vec<f32>>,
    fallback: HashEmbedder,
}

impl LookupEmbedder {
    pub fn new(dimension: usize, table: HashMap<String, Vec<f32>>) -> Self {
        Self {
            table,
            fallback: HashEmbedder::new(dimension),
        }
    }
}

impl EmbeddingProvider for LookupEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        Ok(texts
            .iter()
            .map(|t| {
                self.table
                    .get(t)
                    .cloned()
                    .unwrap_or_else(|| self.fallback.vector_for(t))
            })
            .collect())
    }

    fn name(&self) -> &str {
        "lookup"
    }
}
