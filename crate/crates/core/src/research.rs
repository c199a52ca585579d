//! Research mode: review-only context retrieval, sub-question generation,
//! one expert answer per sub-question, then a synthesis over all of them
//! with a single consolidated bibliography.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enrich::strip_list_marker;
use crate::ingest::DocType;
use crate::provider::{TextProvider, TextRequest};
use crate::qa::{Citation, QaEngine, QaError, QaRequest, QaResponse, Retrieval};
use crate::store::{Hit, SearchParams};

pub const DEFAULT_MAX_SUBQUESTIONS: usize = 5;
pub const MAX_SUBQUESTIONS_LIMIT: usize = 10;
pub const DEFAULT_PARALLELISM: usize = 2;

fn default_max_subquestions() -> usize {
    DEFAULT_MAX_SUBQUESTIONS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResearchRequest {
    pub topic: String,
    #[serde(default = "default_max_subquestions")]
    pub max_subquestions: usize,
    #[serde(default)]
    pub params: SearchParams,
}

impl ResearchRequest {
    pub fn new(topic: impl Into<String>) -> Self {
        Self {
            topic: topic.into(),
            max_subquestions: DEFAULT_MAX_SUBQUESTIONS,
            params: SearchParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ResearchError> {
        if self.topic.trim().is_empty() {
            return Err(ResearchError::InvalidRequest("topic is empty".into()));
        }
        if !(1..=MAX_SUBQUESTIONS_LIMIT).contains(&self.max_subquestions) {
            return Err(ResearchError::InvalidRequest(format!(
                "max_subquestions must be in 1..={MAX_SUBQUESTIONS_LIMIT}"
            )));
        }
        self.params
            .validate()
            .map_err(|e| ResearchError::InvalidRequest(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubAnswer {
    pub question: String,
    pub response: QaResponse,
    /// Bibliography index for each of `response.citations`, in order.
    pub bibliography_refs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubQuestionFailure {
    pub question: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResearchReport {
    pub topic: String,
    pub overview: String,
    pub overview_citations: Vec<Citation>,
    pub review_trace: Vec<Hit>,
    pub sub_answers: Vec<SubAnswer>,
    pub synthesis: String,
    pub bibliography: Vec<Citation>,
    #[serde(default)]
    pub failures: Vec<SubQuestionFailure>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ResearchError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("review retrieval failed: {0}")]
    Retrieval(#[from] QaError),
    #[error("all {0} sub-questions failed")]
    AllSubquestionsFailed(usize, Vec<SubQuestionFailure>),
}

/// Stage one: hierarchical search restricted to review documents.
pub fn retrieve_review_context(
    topic: &str,
    engine: &QaEngine,
    params: &SearchParams,
) -> Result<Retrieval, QaError> {
    let params = SearchParams {
        doc_type_filter: Some(DocType::Review),
        ..*params
    };
    engine.retrieve(topic, &params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubQuestions {
    pub questions: Vec<String>,
    pub warning: Option<String>,
}

fn subquestion_prompt(topic: &str, context_text: &str, max_n: usize) -> String {
    format!(
        "A researcher wants a thorough answer on the topic below. Using the background \
         material, write up to {max_n} focused sub-questions that together cover the topic. \
         Output one question per line with no numbering or extra text.\n\n\
         Topic: {topic}\n\nBackground:\n{context_text}\n"
    )
}

/// Up to `max_n` distinct sub-questions, one per provider output line.
/// Falls back to the topic itself when the provider fails or yields
/// nothing usable.
pub fn generate_subquestions(
    topic: &str,
    context_text: &str,
    text_llm: &dyn TextProvider,
    max_n: usize,
) -> SubQuestions {
    let max_n = max_n.max(1);
    let fallback = |warning: String| SubQuestions {
        questions: vec![topic.trim().to_string()],
        warning: Some(warning),
    };
    let reply = match text_llm.complete(&TextRequest::new(subquestion_prompt(topic, context_text, max_n))) {
        Ok(r) => r,
        Err(e) => return fallback(format!("sub-question generation failed, using topic: {e}")),
    };
    let mut seen = HashSet::new();
    let questions: Vec<String> = reply
        .lines()
        .map(strip_list_marker)
        .filter(|l| !l.is_empty())
        .filter(|l| seen.insert(l.to_lowercase()))
        .take(max_n)
        .map(str::to_string)
        .collect();
    if questions.is_empty() {
        return fallback("provider produced no sub-questions, using topic".into());
    }
    SubQuestions {
        questions,
        warning: None,
    }
}

/// Deduplicates citations by document in first-appearance order and
/// renumbers them from 1.
pub fn consolidate_bibliography<'a>(lists: impl IntoIterator<Item = &'a [Citation]>) -> Vec<Citation> {
    let mut out: Vec<Citation> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for list in lists {
        for c in list {
            if index.contains_key(&c.doc_id) {
                continue;
            }
            index.insert(c.doc_id.clone(), out.len());
            out.push(Citation {
                ref_index: out.len() + 1,
                ..c.clone()
            });
        }
    }
    out
}

fn ref_marker() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bref\s+(\d+)").expect("valid regex"))
}

/// Rewrites `ref k` markers through `map` (local -> global numbering).
fn remap_refs(text: &str, map: &HashMap<usize, usize>) -> String {
    ref_marker()
        .replace_all(text, |caps: &regex::Captures| {
            let local: usize = caps[1].parse().unwrap_or(0);
            match map.get(&local) {
                Some(global) => format!("ref {global}"),
                None => caps[0].to_string(),
            }
        })
        .into_owned()
}

fn overview_prompt(topic: &str, review: &Retrieval) -> String {
    let mut prompt = String::from("Review passages:\n");
    for hit in &review.hits {
        let (Some(c), Some(text)) = (
            review.citations.iter().find(|c| c.doc_id == hit.doc_id),
            review.chunk_texts.get(&hit.chunk_id),
        ) else {
            continue;
        };
        prompt.push_str(&format!("[ref {}] {} :: {}\n", c.ref_index, c.formatted, text.trim()));
    }
    if review.hits.is_empty() {
        prompt.push_str("(none found)\n");
    }
    prompt.push_str(&format!(
        "\nWrite a concise overview of the topic below based on the review passages, citing \
         them as [ref k]. If there are no passages, give a brief general overview.\n\nTopic: {topic}\n"
    ));
    prompt
}

fn synthesis_prompt(topic: &str, overview: &str, sub_answers: &[SubAnswer], bibliography: &[Citation]) -> String {
    let mut prompt = format!("Topic: {topic}\n\nOverview:\n{overview}\n\n");
    for (i, sa) in sub_answers.iter().enumerate() {
        let map: HashMap<usize, usize> = sa
            .response
            .citations
            .iter()
            .zip(&sa.bibliography_refs)
            .map(|(c, &g)| (c.ref_index, g))
            .collect();
        let sources = sa
            .bibliography_refs
            .iter()
            .map(|g| format!("[ref {g}]"))
            .collect::<Vec<_>>()
            .join(", ");
        prompt.push_str(&format!(
            "Sub-question {}: {}\nAnswer: {}\nSources: {}\n\n",
            i + 1,
            sa.question,
            remap_refs(&sa.response.answer_text, &map),
            if sources.is_empty() { "none".into() } else { sources }
        ));
    }
    prompt.push_str("Bibliography:\n");
    for c in bibliography {
        prompt.push_str(&format!("[ref {}] {}\n", c.ref_index, c.formatted));
    }
    prompt.push_str(
        "\nSynthesize the sub-answers into one comprehensive report on the topic. Cite \
         sources with the bibliography numbers as [ref k].\n",
    );
    prompt
}

pub struct ResearchEngine {
    qa: QaEngine,
    parallelism: usize,
}

impl ResearchEngine {
    pub fn new(qa: QaEngine, parallelism: usize) -> Self {
        Self {
            qa,
            parallelism: parallelism.max(1),
        }
    }

    fn text(&self) -> &dyn TextProvider {
        self.qa.deps().text.as_ref()
    }

    fn answer_all(&self, questions: &[String], params: &SearchParams) -> Vec<Result<QaResponse, QaError>> {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<QaResponse, QaError>>>> =
            questions.iter().map(|_| Mutex::new(None)).collect();
        let workers = self.parallelism.min(questions.len()).max(1);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(q) = questions.get(i) else { break };
                    let request = QaRequest {
                        query: q.clone(),
                        params: *params,
                        session_id: None,
                    };
                    let result = self.qa.answer_query(&request);
                    *slots[i].lock().expect("slot lock poisoned") = Some(result);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot lock poisoned").expect("every slot filled"))
            .collect()
    }

    pub fn run_research(&self, request: &ResearchRequest) -> Result<ResearchReport, ResearchError> {
        request.validate()?;
        let mut warnings = Vec::new();

        let review = retrieve_review_context(&request.topic, &self.qa, &request.params)?;
        let overview = match self
            .text()
            .complete(&TextRequest::new(overview_prompt(&request.topic, &review)))
        {
            Ok(o) => o.trim().to_string(),
            Err(e) => {
                warnings.push(format!("overview generation failed: {e}"));
                String::new()
            }
        };

        let context = if overview.is_empty() {
            review
                .hits
                .iter()
                .filter_map(|h| review.chunk_texts.get(&h.chunk_id))
                .map(String::as_str)
                .collect::<Vec<_>>()
                .join("\n\n")
        } else {
            overview.clone()
        };
        let subs = generate_subquestions(&request.topic, &context, self.text(), request.max_subquestions);
        warnings.extend(subs.warning);

        let mut answered: Vec<(String, QaResponse)> = Vec::new();
        let mut failures = Vec::new();
        for (q, result) in subs.questions.iter().zip(self.answer_all(&subs.questions, &request.params)) {
            match result {
                Ok(resp) => answered.push((q.clone(), resp)),
                Err(e) => failures.push(SubQuestionFailure {
                    question: q.clone(),
                    error: e.to_string(),
                }),
            }
        }
        if answered.is_empty() {
            return Err(ResearchError::AllSubquestionsFailed(failures.len(), failures));
        }

        let bibliography = consolidate_bibliography(
            std::iter::once(review.citations.as_slice())
                .chain(answered.iter().map(|(_, r)| r.citations.as_slice())),
        );
        let global: HashMap<&str, usize> = bibliography
            .iter()
            .map(|c| (c.doc_id.as_str(), c.ref_index))
            .collect();
        let sub_answers: Vec<SubAnswer> = answered
            .into_iter()
            .map(|(question, response)| SubAnswer {
                bibliography_refs: response
                    .citations
                    .iter()
                    .map(|c| global[c.doc_id.as_str()])
                    .collect(),
                question,
                response,
            })
            .collect();

        let synthesis = match self.text().complete(&TextRequest::new(synthesis_prompt(
            &request.topic,
            &overview,
            &sub_answers,
            &bibliography,
        ))) {
            Ok(s) => s.trim().to_string(),
            Err(e) => {
                warnings.push(format!("synthesis failed: {e}"));
                String::new()
            }
        };

        Ok(ResearchReport {
            topic: request.topic.clone(),
            overview,
            overview_citations: review.citations,
            review_trace: review.hits,
            sub_answers,
            synthesis,
            bibliography,
            failures,
            warnings,
        })
    }
}
