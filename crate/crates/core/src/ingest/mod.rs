//! Corpus ingestion: Markdown segmentation, LLM cleaning, short-chunk merging
//! and citation formatting.

mod citation;
mod manifest;
pub mod markdown;
mod merge;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::{ProviderError, TextProvider, TextRequest};

pub use citation::format_citation;
pub use manifest::{load_manifest, Manifest, ManifestEntry};
pub use markdown::{parse_markdown, Section};
pub use merge::{apply_merges, propose_merges, MergeOutcome, MergePlan, DEFAULT_MIN_CHUNK_CHARS};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid document metadata: {0}")]
    InvalidMetadata(String),
    #[error("invalid merge plan: {0}")]
    InvalidPlan(String),
    #[error("cannot format citation: {0}")]
    Citation(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocType {
    Research,
    Review,
}

impl std::fmt::Display for DocType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DocType::Research => "research",
            DocType::Review => "review",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentMetadata {
    pub doc_id: String,
    pub title: String,
    #[serde(default)]
    pub authors: Vec<String>,
    #[serde(default)]
    pub journal: String,
    #[serde(default)]
    pub doi: String,
    #[serde(default)]
    pub year: Option<i32>,
    pub doc_type: DocType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issue: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pages: Option<String>,
}

impl DocumentMetadata {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.doc_id.trim().is_empty() {
            return Err(IngestError::InvalidMetadata("doc_id is empty".into()));
        }
        if self.doc_id.contains('#') {
            return Err(IngestError::InvalidMetadata(format!(
                "doc_id {:?} must not contain '#'",
                self.doc_id
            )));
        }
        if let Some(year) = self.year {
            if !(1800..=2100).contains(&year) {
                return Err(IngestError::InvalidMetadata(format!(
                    "{}: year {year} outside [1800, 2100]",
                    self.doc_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub metadata: DocumentMetadata,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub body_markdown: String,
}

impl RawDocument {
    pub fn validate(&self) -> Result<(), IngestError> {
        self.metadata.validate()?;
        if self.abstract_text.trim().is_empty() {
            return Err(IngestError::InvalidMetadata(format!(
                "{}: abstract is empty",
                self.metadata.doc_id
            )));
        }
        Ok(())
    }
}

/// A heading-scoped segment of a document; the retrieval unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub heading_path: Vec<String>,
    pub level: usize,
    pub text: String,
    pub char_count: usize,
}

impl Chunk {
    pub fn new(
        chunk_id: impl Into<String>,
        doc_id: impl Into<String>,
        heading_path: Vec<String>,
        text: impl Into<String>,
    ) -> Self {
        let text = text.into();
        Self {
            chunk_id: chunk_id.into(),
            doc_id: doc_id.into(),
            level: heading_path.len(),
            heading_path,
            char_count: text.chars().count(),
            text,
        }
    }

    fn set_text(&mut self, text: String) {
        self.char_count = text.chars().count();
        self.text = text;
    }
}

pub fn chunk_id(doc_id: &str, ordinal: usize) -> String {
    format!("{doc_id}#{ordinal:04}")
}

/// One chunk per non-empty section, numbered from 1 in document order.
pub fn segment_document(doc: &RawDocument) -> Vec<Chunk> {
    parse_markdown(&doc.body_markdown)
        .into_iter()
        .filter(|s| !s.body.is_empty())
        .enumerate()
        .map(|(i, s)| {
            Chunk::new(
                chunk_id(&doc.metadata.doc_id, i + 1),
                &doc.metadata.doc_id,
                s.heading_path,
                s.body,
            )
        })
        .collect()
}

const CLEAN_SYSTEM: &str = "You clean text extracted from scientific articles.";

fn clean_prompt(chunk: &Chunk) -> String {
    format!(
        "Task: clean the passage below.\n\
         Remove non-content elements such as formatting symbols, figure and table \
         captions, page headers, footnote markers and reference-list noise. \
         Keep every scientific statement, value and name unchanged. \
         Reply with the cleaned passage only.\n\n\
         Section: {}\n\
         Passage:\n{}",
        chunk.heading_path.join(" > "),
        chunk.text
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanOutcome {
    pub chunk: Chunk,
    pub warning: Option<String>,
}

/// Replaces the chunk text with the provider's cleaned version.
///
/// Empty provider output keeps the original text and sets a warning. Heading
/// markers in the provider output are flattened to plain lines.
pub fn clean_chunk(chunk: &Chunk, text_llm: &dyn TextProvider) -> Result<CleanOutcome, IngestError> {
    let reply = text_llm.complete(&TextRequest::new(clean_prompt(chunk)).with_system(CLEAN_SYSTEM))?;
    let cleaned = markdown::strip_heading_markers(&reply).trim().to_string();
    let mut out = chunk.clone();
    if cleaned.is_empty() {
        out.set_text(chunk.text.clone());
        return Ok(CleanOutcome {
            chunk: out,
            warning: Some(format!(
                "{}: cleaner returned empty text, original kept",
                chunk.chunk_id
            )),
        });
    }
    out.set_text(cleaned);
    Ok(CleanOutcome {
        chunk: out,
        warning: None,
    })
}

fn screen_prompt(doc: &RawDocument, topic: &str) -> String {
    format!(
        "Decide whether the article below is relevant to the topic \"{topic}\".\n\
         Answer with exactly one word: yes or no.\n\n\
         Title: {}\nAbstract: {}",
        doc.metadata.title, doc.abstract_text
    )
}

/// Optional ingest-time relevance screen over the title and abstract.
/// Anything other than a leading "yes" rejects the document.
pub fn screen_document(
    doc: &RawDocument,
    topic: &str,
    text_llm: &dyn TextProvider,
) -> Result<bool, IngestError> {
    let reply = text_llm.complete(&TextRequest::new(screen_prompt(doc, topic)))?;
    Ok(crate::qa::parse_yes_no(&reply))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{EchoTextProvider, FixedTextProvider, FnTextProvider};

    pub(crate) fn meta(doc_id: &str) -> DocumentMetadata {
        DocumentMetadata {
            doc_id: doc_id.into(),
            title: "T".into(),
            authors: vec!["Doe J".into()],
            journal: "J".into(),
            doi: String::new(),
            year: Some(2020),
            doc_type: DocType::Research,
            source_url: None,
            volume: None,
            issue: None,
            pages: None,
        }
    }

    fn doc(body: &str) -> RawDocument {
        RawDocument {
            metadata: meta("d1"),
            abstract_text: "abs".into(),
            body_markdown: body.into(),
        }
    }

    #[test]
    fn segments_with_ordinals() {
        let chunks = segment_document(&doc("pre\n# A\na\n## B\nb"));
        let ids: Vec<_> = chunks.iter().map(|c| c.chunk_id.as_str()).collect();
        assert_eq!(ids, ["d1#0001", "d1#0002", "d1#0003"]);
        assert_eq!(chunks[0].level, 0);
        assert_eq!(chunks[2].heading_path, ["A", "B"]);
    }

    #[test]
    fn heading_only_body_yields_nothing() {
        assert!(segment_document(&doc("# A\n## B\n\n### C\n")).is_empty());
    }

    #[test]
    fn empty_sections_do_not_consume_ordinals() {
        let chunks = segment_document(&doc("# A\n# B\nb\n# C\nc"));
        assert_eq!(chunks[0].chunk_id, "d1#0001");
        assert_eq!(chunks[0].heading_path, ["B"]);
        assert_eq!(chunks[1].chunk_id, "d1#0002");
    }

    #[test]
    fn char_count_is_chars_not_bytes() {
        let c = Chunk::new("x#0001", "x", vec![], "héllo 漢字");
        assert_eq!(c.char_count, 8);
    }

    #[test]
    fn metadata_validation() {
        let mut m = meta("d");
        assert!(m.validate().is_ok());
        m.year = Some(1700);
        assert!(m.validate().is_err());
        m.year = None;
        m.doc_id = "a#b".into();
        assert!(m.validate().is_err());
    }

    #[test]
    fn abstract_required() {
        let mut d = doc("x");
        d.abstract_text = "  ".into();
        assert!(d.validate().is_err());
    }

    #[test]
    fn identity_cleaner_keeps_text() {
        let provider = FnTextProvider::new("id", |req: &TextRequest| {
            Ok(req.prompt.split("Passage:\n").nth(1).unwrap().to_string())
        });
        let mut chunk = Chunk::new("d#0001", "d", vec!["A".into()], "some text");
        chunk.char_count = 0;
        let out = clean_chunk(&chunk, &provider).unwrap();
        assert_eq!(out.chunk.text, "some text");
        assert_eq!(out.chunk.char_count, 9);
        assert_eq!(out.chunk.chunk_id, chunk.chunk_id);
        assert!(out.warning.is_none());
    }

    #[test]
    fn figure_stripping_cleaner() {
        let provider = FnTextProvider::new("strip", |req: &TextRequest| {
            let passage = req.prompt.split("Passage:\n").nth(1).unwrap();
            Ok(passage
                .lines()
                .filter(|l| !regex::Regex::new(r"^Figure \d+:").unwrap().is_match(l))
                .collect::<Vec<_>>()
                .join("\n"))
        });
        let chunk = Chunk::new("d#0001", "d", vec![], "alpha\nFigure 2: a plot\nbeta");
        let out = clean_chunk(&chunk, &provider).unwrap();
        assert_eq!(out.chunk.text, "alpha\nbeta");
        assert!(!out.chunk.text.contains("Figure 2:"));
    }

    #[test]
    fn empty_cleaner_output_keeps_original() {
        let chunk = Chunk::new("d#0001", "d", vec![], "keep me");
        let out = clean_chunk(&chunk, &FixedTextProvider::ok("  \n")).unwrap();
        assert_eq!(out.chunk, chunk);
        assert!(out.warning.is_some());
    }

    #[test]
    fn cleaner_cannot_inject_headings() {
        let chunk = Chunk::new("d#0001", "d", vec![], "x");
        let out = clean_chunk(&chunk, &FixedTextProvider::ok("# Title\nbody")).unwrap();
        assert_eq!(out.chunk.text, "Title\nbody");
    }

    #[test]
    fn cleaner_transport_error_is_retryable() {
        let chunk = Chunk::new("d#0001", "d", vec![], "x");
        let err = clean_chunk(&chunk, &FixedTextProvider::failing(ProviderError::Timeout)).unwrap_err();
        match err {
            IngestError::Provider(p) => assert!(p.is_retryable()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn screen_parses_yes() {
        let d = doc("x");
        assert!(screen_document(&d, "terpenoids", &FixedTextProvider::ok("Yes.")).unwrap());
        assert!(!screen_document(&d, "terpenoids", &FixedTextProvider::ok("unclear")).unwrap());
        // The echo provider replies with the prompt, which does not start with yes.
        assert!(!screen_document(&d, "terpenoids", &EchoTextProvider).unwrap());
    }
}
