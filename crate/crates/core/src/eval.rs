//! Multiple-choice benchmark harness.
//!
//! Each model answers every question `n_trials` times, either bare
//! (`baseline`) or with retrieved passages prepended (`rag`). Trials are
//! appended to a JSON-lines log as they finish so an interrupted run can
//! resume. Accuracy is per trial, over a refined question set from which
//! questions every model always answers correctly are removed.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::{TextProvider, TextRequest};
use crate::qa::QaEngine;
use crate::store::SearchParams;

pub const DEFAULT_TRIALS: usize = 5;
pub const OPTION_LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("question {qid}: {reason}")]
    InvalidQuestion { qid: String, reason: String },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("incomplete trial coverage, missing cells: {}", .0.join(", "))]
    IncompleteCoverage(Vec<String>),
    #[error("refined question set is empty")]
    EmptyRefinedSet,
    #[error("refined set references unknown question {0}")]
    UnknownQuestion(String),
    #[error("rag mode requires a retrieval engine")]
    MissingRetrieval,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McQuestion {
    pub qid: String,
    pub stem: String,
    pub options: Vec<String>,
    pub correct: usize,
    pub discipline: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_ref: Option<String>,
}

#[derive(Deserialize)]
struct RawQuestion {
    qid: Option<String>,
    stem: Option<String>,
    options: Option<Vec<String>>,
    correct: Option<serde_json::Value>,
    discipline: Option<String>,
    source_ref: Option<String>,
}

fn invalid(qid: &str, reason: impl Into<String>) -> EvalError {
    EvalError::InvalidQuestion {
        qid: qid.to_string(),
        reason: reason.into(),
    }
}

/// Parses JSON-lines test set text. Blank lines are ignored.
pub fn parse_testset(text: &str) -> Result<Vec<McQuestion>, EvalError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawQuestion = serde_json::from_str(line).map_err(|e| EvalError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        let qid = raw
            .qid
            .filter(|q| !q.trim().is_empty())
            .ok_or_else(|| EvalError::Parse {
                line: i + 1,
                reason: "missing qid".into(),
            })?;
        let stem = raw
            .stem
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| invalid(&qid, "missing stem"))?;
        let options = raw.options.ok_or_else(|| invalid(&qid, "missing options"))?;
        if options.len() != 4 {
            return Err(invalid(&qid, format!("expected 4 options, found {}", options.len())));
        }
        let correct = match raw.correct {
            None | Some(serde_json::Value::Null) => return Err(invalid(&qid, "missing correct answer")),
            Some(v) => v
                .as_u64()
                .filter(|&c| c < 4)
                .ok_or_else(|| invalid(&qid, format!("correct must be an index in 0..=3, got {v}")))?
                as usize,
        };
        if !seen.insert(qid.clone()) {
            return Err(invalid(&qid, "duplicate qid"));
        }
        out.push(McQuestion {
            qid,
            stem,
            options,
            correct,
            discipline: raw.discipline.unwrap_or_else(|| "general".into()),
            source_ref: raw.source_ref,
        });
    }
    Ok(out)
}

pub fn load_testset(path: impl AsRef<Path>) -> Result<Vec<McQuestion>, EvalError> {
    let path = path.as_ref();
    parse_testset(&fs::read_to_string(path).map_err(io_err(path))?)
}

fn letter_index(c: char) -> Option<usize> {
    OPTION_LETTERS.iter().position(|&l| l == c)
}

fn answer_pattern() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\banswer\b(?:\s+is)?\s*:?([^.\n]*)").expect("valid regex"))
}

fn letter_tokens(text: &str) -> Vec<usize> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter_map(|tok| {
            let mut chars = tok.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => letter_index(c),
                _ => None,
            }
        })
        .collect()
}

/// Extracts the chosen option from a completion.
///
/// A lone standalone capital A–D wins. When several different letters
/// appear, an explicit "Answer: X" / "answer is X" clause decides if it
/// names exactly one letter; otherwise the completion is ambiguous.
pub fn parse_choice(completion: &str) -> Option<usize> {
    let letters = letter_tokens(completion);
    let distinct: HashSet<usize> = letters.iter().copied().collect();
    if distinct.len() == 1 {
        return letters.first().copied();
    }
    let declared: HashSet<usize> = answer_pattern()
        .captures_iter(completion)
        .flat_map(|c| letter_tokens(&c[1]))
        .collect();
    if declared.len() == 1 {
        declared.into_iter().next()
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Baseline,
    Rag,
}

impl std::str::FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(EvalMode::Baseline),
            "rag" => Ok(EvalMode::Rag),
            other => Err(format!("unknown eval mode {other:?} (expected baseline or rag)")),
        }
    }
}

impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalMode::Baseline => "baseline",
            EvalMode::Rag => "rag",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialResult {
    pub qid: String,
    pub model_id: String,
    pub mode: EvalMode,
    pub run_index: usize,
    pub chosen: Option<usize>,
    pub parse_failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialResult {
    fn cell(&self) -> (String, String, EvalMode, usize) {
        (self.model_id.clone(), self.qid.clone(), self.mode, self.run_index)
    }
}

/// A model under evaluation.
#[derive(Clone)]
pub struct EvalModel {
    pub id: String,
    pub provider: Arc<dyn TextProvider>,
}

pub fn mc_prompt(q: &McQuestion, context: Option<&str>) -> String {
    let mut prompt = String::new();
    if let Some(ctx) = context.filter(|c| !c.trim().is_empty()) {
        prompt.push_str("Reference passages:\n");
        prompt.push_str(ctx);
        prompt.push_str("\nUse the reference passages where they help.\n\n");
    }
    prompt.push_str(
        "Answer the following multiple-choice question. Reply with the letter of the single \
         correct option (A, B, C or D).\n\n",
    );
    let _ = writeln!(prompt, "Question: {}", q.stem);
    for (letter, option) in OPTION_LETTERS.iter().zip(&q.options) {
        let _ = writeln!(prompt, "{letter}. {option}");
    }
    prompt.push_str("Answer:");
    prompt
}

fn rag_context(q: &McQuestion, engine: &QaEngine, params: &SearchParams) -> Result<String, String> {
    let query = format!("{}\n{}", q.stem, q.options.join("\n"));
    let r = engine.retrieve(&query, params).map_err(|e| e.to_string())?;
    let by_doc: HashMap<&str, usize> = r
        .citations
        .iter()
        .map(|c| (c.doc_id.as_str(), c.ref_index))
        .collect();
    let mut ctx = String::new();
    let mut used = 0usize;
    for hit in &r.hits {
        let Some(text) = r.chunk_texts.get(&hit.chunk_id) else {
            continue;
        };
        let block = format!("[ref {}] {}\n", by_doc[hit.doc_id.as_str()], text.trim());
        if used > 0 && used + block.len() > engine.config().prompt_budget {
            break;
        }
        used += block.len();
        ctx.push_str(&block);
    }
    Ok(ctx)
}

/// Trial log reader: returns completed results, tolerating one torn final
/// line (which is cut off so appends start on a fresh line).
pub fn read_trial_log(path: &Path) -> Result<Vec<TrialResult>, EvalError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut text = fs::read_to_string(path).map_err(io_err(path))?;
    if !text.is_empty() && !text.ends_with('\n') {
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        text.truncate(keep);
        let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        f.set_len(keep as u64).map_err(io_err(path))?;
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

#[derive(Clone)]
pub struct TrialPlan<'a> {
    pub models: &'a [EvalModel],
    pub questions: &'a [McQuestion],
    pub n_trials: usize,
    pub mode: EvalMode,
    pub params: SearchParams,
    pub parallelism: usize,
}

/// Runs every missing (model, question, trial) cell.
///
/// With a `log` path, earlier results for this mode are reused and new ones
/// appended as they complete. Provider failures are recorded as failed
/// trials. Results come back sorted by model, question and trial order.
pub fn run_trials(
    plan: &TrialPlan<'_>,
    rag: Option<&QaEngine>,
    log: Option<&Path>,
) -> Result<Vec<TrialResult>, EvalError> {
    if plan.mode == EvalMode::Rag && rag.is_none() {
        return Err(EvalError::MissingRetrieval);
    }
    let model_ids: HashSet<&str> = plan.models.iter().map(|m| m.id.as_str()).collect();
    let qids: HashSet<&str> = plan.questions.iter().map(|q| q.qid.as_str()).collect();
    let mut results: Vec<TrialResult> = match log {
        Some(path) => read_trial_log(path)?
            .into_iter()
            .filter(|r| {
                r.mode == plan.mode
                    && model_ids.contains(r.model_id.as_str())
                    && qids.contains(r.qid.as_str())
                    && (1..=plan.n_trials).contains(&r.run_index)
            })
            .collect(),
        None => Vec::new(),
    };
    let done: HashSet<_> = results.iter().map(TrialResult::cell).collect();
    results.retain({
        let mut first = HashSet::new();
        move |r| first.insert(r.cell())
    });

    let mut cells: Vec<(usize, usize, usize)> = Vec::new();
    for (mi, m) in plan.models.iter().enumerate() {
        for (qi, q) in plan.questions.iter().enumerate() {
            for run in 1..=plan.n_trials {
                if !done.contains(&(m.id.clone(), q.qid.clone(), plan.mode, run)) {
                    cells.push((mi, qi, run));
                }
            }
        }
    }

    let mut contexts: HashMap<usize, Result<String, String>> = HashMap::new();
    if let Some(engine) = rag.filter(|_| plan.mode == EvalMode::Rag) {
        let needed: HashSet<usize> = cells.iter().map(|c| c.1).collect();
        for qi in needed {
            contexts.insert(qi, rag_context(&plan.questions[qi], engine, &plan.params));
        }
    }

    let writer = match log {
        Some(path) => Some(Mutex::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(io_err(path))?,
        )),
        None => None,
    };
    let next = AtomicUsize::new(0);
    let fresh: Mutex<Vec<TrialResult>> = Mutex::new(Vec::with_capacity(cells.len()));
    let write_error: Mutex<Option<EvalError>> = Mutex::new(None);
    let workers = plan.parallelism.max(1).min(cells.len().max(1));

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(mi, qi, run)) = cells.get(i) else { break };
                let model = &plan.models[mi];
                let q = &plan.questions[qi];
                let result = run_cell(model, q, run, plan.mode, contexts.get(&qi));
                if let (Some(w), Some(path)) = (&writer, log) {
                    let mut line = serde_json::to_string(&result).expect("trial serializes");
                    line.push('\n');
                    let mut f = w.lock().expect("log lock poisoned");
                    if let Err(e) = f.write_all(line.as_bytes()).and_then(|_| f.flush()) {
                        write_error
                            .lock()
                            .expect("error lock poisoned")
                            .get_or_insert(io_err(path)(e));
                        break;
                    }
                }
                fresh.lock().expect("results lock poisoned").push(result);
            });
        }
    });
    if let Some(e) = write_error.into_inner().expect("error lock poisoned") {
        return Err(e);
    }

    results.extend(fresh.into_inner().expect("results lock poisoned"));
    let model_pos: HashMap<&str, usize> = plan
        .models
        .iter()
        .enumerate()
        .map(|(i, m)| (m.id.as_str(), i))
        .collect();
    let q_pos: HashMap<&str, usize> = plan
        .questions
        .iter()
        .enumerate()
        .map(|(i, q)| (q.qid.as_str(), i))
        .collect();
    results.sort_by_key(|r| (model_pos[r.model_id.as_str()], q_pos[r.qid.as_str()], r.run_index));
    Ok(results)
}

fn run_cell(
    model: &EvalModel,
    q: &McQuestion,
    run: usize,
    mode: EvalMode,
    context: Option<&Result<String, String>>,
) -> TrialResult {
    let failed = |error: String| TrialResult {
        qid: q.qid.clone(),
        model_id: model.id.clone(),
        mode,
        run_index: run,
        chosen: None,
        parse_failed: true,
        error: Some(error),
    };
    let ctx = match context {
        Some(Ok(c)) => Some(c.as_str()),
        Some(Err(e)) => return failed(format!("retrieval failed: {e}")),
        None => None,
    };
    match model.provider.complete(&TextRequest::new(mc_prompt(q, ctx))) {
        Ok(completion) => {
            let chosen = parse_choice(&completion);
            TrialResult {
                qid: q.qid.clone(),
                model_id: model.id.clone(),
                mode,
                run_index: run,
                chosen,
                parse_failed: chosen.is_none(),
                error: None,
            }
        }
        Err(e) => failed(e.to_string()),
    }
}

/// Question ids that survive refinement, in test-set order.
///
/// A question is excluded when every listed model chose the correct option
/// in every one of its `n_trials` trials. Every (model, question, trial)
/// cell must be present.
pub fn refine_testset(
    results: &[TrialResult],
    models: &[String],
    questions: &[McQuestion],
    n_trials: usize,
) -> Result<Vec<String>, EvalError> {
    let mut by_cell: HashMap<(&str, &str, usize), Vec<&TrialResult>> = HashMap::new();
    for r in results {
        by_cell
            .entry((r.model_id.as_str(), r.qid.as_str(), r.run_index))
            .or_default()
            .push(r);
    }
    let mut missing = Vec::new();
    for m in models {
        for q in questions {
            for run in 1..=n_trials {
                if !by_cell.contains_key(&(m.as_str(), q.qid.as_str(), run)) {
                    missing.push(format!("{m}/{}/{run}", q.qid));
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(EvalError::IncompleteCoverage(missing));
    }
    Ok(questions
        .iter()
        .filter(|q| {
            let unanimous = models.iter().all(|m| {
                (1..=n_trials).all(|run| {
                    by_cell[&(m.as_str(), q.qid.as_str(), run)]
                        .iter()
                        .all(|r| r.chosen == Some(q.correct))
                })
            });
            !unanimous
        })
        .map(|q| q.qid.clone())
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub trials: usize,
    pub correct: usize,
    pub parse_failed: usize,
    pub accuracy: f64,
}

impl Tally {
    fn add(&mut self, correct: bool, parse_failed: bool) {
        self.trials += 1;
        self.correct += usize::from(correct);
        self.parse_failed += usize::from(parse_failed);
        self.accuracy = self.correct as f64 / self.trials as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub model_id: String,
    pub mode: EvalMode,
    #[serde(flatten)]
    pub overall: Tally,
    pub per_discipline: BTreeMap<String, Tally>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub refined_qids: Vec<String>,
    pub scores: Vec<ModelScore>,
}

impl EvalReport {
    pub fn score_for(&self, model_id: &str, mode: EvalMode) -> Option<&ModelScore> {
        self.scores
            .iter()
            .find(|s| s.model_id == model_id && s.mode == mode)
    }

    /// Plain-text table, one row per (model, mode).
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "refined questions: {}", self.refined_qids.len());
        let _ = writeln!(
            out,
            "{:<24} {:<9} {:>7} {:>8} {:>8} {:>9}",
            "model", "mode", "trials", "correct", "unparsed", "accuracy"
        );
        for s in &self.scores {
            let _ = writeln!(
                out,
                "{:<24} {:<9} {:>7} {:>8} {:>8} {:>9.4}",
                s.model_id, s.mode, s.overall.trials, s.overall.correct, s.overall.parse_failed, s.overall.accuracy
            );
            for (d, t) in &s.per_discipline {
                let _ = writeln!(
                    out,
                    "  {:<22} {:<9} {:>7} {:>8} {:>8} {:>9.4}",
                    d, "", t.trials, t.correct, t.parse_failed, t.accuracy
                );
            }
        }
        out
    }
}

/// Per-trial accuracy over the refined set; parse failures count as wrong.
pub fn score(
    results: &[TrialResult],
    questions: &[McQuestion],
    refined: &[String],
) -> Result<EvalReport, EvalError> {
    if refined.is_empty() {
        return Err(EvalError::EmptyRefinedSet);
    }
    let by_qid: HashMap<&str, &McQuestion> = questions.iter().map(|q| (q.qid.as_str(), q)).collect();
    for qid in refined {
        if !by_qid.contains_key(qid.as_str()) {
            return Err(EvalError::UnknownQuestion(qid.clone()));
        }
    }
    let refined_set: HashSet<&str> = refined.iter().map(String::as_str).collect();
    let mut groups: BTreeMap<(String, EvalMode), ModelScore> = BTreeMap::new();
    for r in results.iter().filter(|r| refined_set.contains(r.qid.as_str())) {
        let q = by_qid[r.qid.as_str()];
        let correct = !r.parse_failed && r.chosen == Some(q.correct);
        let entry = groups
            .entry((r.model_id.clone(), r.mode))
            .or_insert_with(|| ModelScore {
                model_id: r.model_id.clone(),
                mode: r.mode,
                overall: Tally::default(),
                per_discipline: BTreeMap::new(),
            });
        entry.overall.add(correct, r.parse_failed);
        entry
            .per_discipline
            .entry(q.discipline.clone())
            .or_default()
            .add(correct, r.parse_failed);
    }
    Ok(EvalReport {
        refined_qids: refined.to_vec(),
        scores: groups.into_values().collect(),
    })
}

/// Writes results as JSON lines (used for exporting a finished run).
pub fn write_trial_log(path: &Path, results: &[TrialResult]) -> Result<(), EvalError> {
    let mut f = File::create(path).map_err(io_err(path))?;
    for r in results {
        let line = serde_json::to_string(r).expect("trial serializes");
        writeln!(f, "{line}").map_err(io_err(path))?;
    }
    Ok(())
}
