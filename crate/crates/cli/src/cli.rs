//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 when a
//! provider or the store fails.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use litkb_core::eval::{
    load_testset, read_trial_log, refine_testset, run_trials, score, EvalError, EvalMode, EvalModel, McQuestion,
    TrialPlan, TrialResult,
};
use litkb_core::qa::{QaError, QaEvent};
use litkb_core::{QaRequest, ResearchRequest, ServiceConfig};

use crate::ops::{self, ErrorCode, OpError};
use crate::state::{open_store, text_provider, AppState, Providers, StartupError};

#[derive(Debug, Parser)]
#[command(name = "litkb", version, about = "Literature knowledge base: ingest, cited Q&A, research reports, evaluation")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Store file; overrides `store_path` from the configuration.
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Print warnings and progress to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest the documents listed in a manifest and save the store.
    Ingest { manifest: PathBuf },
    /// Answer a question with citations.
    Query {
        text: String,
        /// Print the full response as JSON.
        #[arg(long)]
        json: bool,
        #[arg(long)]
        min_score: Option<f64>,
    },
    /// Produce a research report on a topic.
    Research {
        topic: String,
        #[arg(long)]
        max_subquestions: Option<usize>,
        #[arg(long)]
        json: bool,
    },
    /// Run the HTTP service.
    Serve {
        /// Listen address; defaults to `listen` from the configuration.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Multiple-choice evaluation.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Debug, Args)]
pub struct EvalFiles {
    /// JSON-lines test set.
    #[arg(long)]
    pub testset: PathBuf,
    /// JSON-lines trial log.
    #[arg(long)]
    pub log: PathBuf,
    /// Trials per question; defaults to `eval.trials`.
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Run (or resume) trials, appending to the log.
    Run {
        #[command(flatten)]
        files: EvalFiles,
        #[arg(long, default_value = "baseline")]
        mode: EvalMode,
    },
    /// List the questions not answered correctly by every model in every trial.
    Refine {
        #[command(flatten)]
        files: EvalFiles,
        /// Write the refined ids here, one per line, instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy per model and mode over the refined set.
    Score {
        #[command(flatten)]
        files: EvalFiles,
        /// Refined ids, one per line; computed from the baseline trials when absent.
        #[arg(long)]
        refined: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Failed(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl From<OpError> for CliError {
    fn from(e: OpError) -> Self {
        match e.code {
            ErrorCode::BadRequest => CliError::Invalid(e.message),
            _ => CliError::Failed(e.message),
        }
    }
}

impl From<StartupError> for CliError {
    fn from(e: StartupError) -> Self {
        match e {
            StartupError::Store { .. } => CliError::Failed(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io { .. } => CliError::Failed(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<ServiceConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ServiceConfig::load(path).map_err(|e| CliError::Invalid(e.to_string()))?,
        None => ServiceConfig::default(),
    };
    if let Some(store) = &cli.store {
        cfg.store_path = store.clone();
    }
    Ok(cfg)
}

fn warn_all(cli: &Cli, warnings: &[String]) {
    if cli.verbose {
        for w in warnings {
            eprintln!("warning: {w}");
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("response serializes"));
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Ingest { manifest } => {
            let state = AppState::from_config(cfg)?;
            let docs = ops::load_documents(&ops::IngestRequest {
                manifest_path: Some(manifest.clone()),
                documents: None,
            })?;
            let status = ops::ingest(&state, &docs)?;
            warn_all(cli, &status.report.warnings);
            let r = &status.report;
            println!("documents: {}", r.documents.len());
            println!("screened out: {}", r.screened_out.len());
            println!("chunks: {}", r.chunks);
            println!("questions: {}", r.questions);
            println!(
                "store: {} documents, {} chunks, {} questions",
                status.counts.docs, status.counts.chunks, status.counts.questions
            );
            Ok(())
        }
        Command::Query { text, json, min_score } => {
            let state = AppState::from_config(cfg)?;
            let mut req = QaRequest::new(text.clone());
            if let Some(m) = min_score {
                req.params.min_score = *m;
            }
            match state.qa_engine().answer_query(&req) {
                Ok(resp) => {
                    warn_all(cli, &resp.warnings);
                    if *json {
                        print_json(&resp);
                    } else {
                        for event in &resp.events {
                            print_event(event);
                        }
                    }
                    Ok(())
                }
                Err(QaError::Answer { partial, source }) => {
                    warn_all(cli, &partial.warnings);
                    if !*json {
                        if !partial.molecules.is_empty() {
                            print_event(&QaEvent::Molecules(partial.molecules.clone()));
                        }
                        print_event(&QaEvent::Citations(partial.citations.clone()));
                    }
                    Err(CliError::Failed(format!("answer generation failed: {source}")))
                }
                Err(e) => Err(OpError::from(e).into()),
            }
        }
        Command::Research { topic, max_subquestions, json } => {
            let state = AppState::from_config(cfg)?;
            let mut req = ResearchRequest::new(topic.clone());
            req.max_subquestions = max_subquestions.unwrap_or(state.config.research.max_subquestions);
            let report = ops::research(&state, &req)?;
            warn_all(cli, &report.warnings);
            if *json {
                print_json(&report);
            } else {
                print_report(&report);
            }
            Ok(())
        }
        Command::Serve { listen } => {
            let listen = listen.clone().unwrap_or_else(|| cfg.listen.clone());
            let state = Arc::new(AppState::from_config(cfg)?);
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| CliError::Failed(e.to_string()))?;
            rt.block_on(crate::api::serve(state, &listen))
                .map_err(|e| CliError::Failed(format!("cannot serve on {listen}: {e}")))
        }
        Command::Eval(cmd) => eval(cli, cfg, cmd),
    }
}

fn print_event(event: &QaEvent) {
    match event {
        QaEvent::Molecules(ms) => {
            println!("Molecules:");
            for m in ms {
                match &m.detail_url {
                    Some(url) => println!("  {}  {}  {}", m.name, m.smiles, url),
                    None => println!("  {}  {}", m.name, m.smiles),
                }
            }
            println!();
        }
        QaEvent::Citations(cs) => {
            println!("References:");
            if cs.is_empty() {
                println!("  (none)");
            }
            for c in cs {
                match &c.url {
                    Some(url) => println!("  [{}] {} {}", c.ref_index, c.formatted, url),
                    None => println!("  [{}] {}", c.ref_index, c.formatted),
                }
            }
            println!();
        }
        QaEvent::Answer(text) => println!("{text}"),
    }
}

fn print_report(report: &litkb_core::ResearchReport) {
    println!("# {}\n", report.topic);
    if !report.overview.is_empty() {
        println!("## Overview\n\n{}\n", report.overview);
    }
    for (i, sa) in report.sub_answers.iter().enumerate() {
        println!("## {}. {}\n\n{}\n", i + 1, sa.question, sa.response.answer_text);
    }
    for f in &report.failures {
        println!("## (failed) {}\n\n{}\n", f.question, f.error);
    }
    if !report.synthesis.is_empty() {
        println!("## Synthesis\n\n{}\n", report.synthesis);
    }
    println!("## References\n");
    for c in &report.bibliography {
        match &c.url {
            Some(url) => println!("[{}] {} {}", c.ref_index, c.formatted, url),
            None => println!("[{}] {}", c.ref_index, c.formatted),
        }
    }
}

fn eval_models(cfg: &ServiceConfig) -> Result<Vec<EvalModel>, CliError> {
    if cfg.eval.models.is_empty() {
        return Ok(vec![EvalModel {
            id: "default".into(),
            provider: text_provider(&cfg.providers.text)?,
        }]);
    }
    cfg.eval
        .models
        .iter()
        .map(|m| {
            Ok(EvalModel {
                id: m.id.clone(),
                provider: text_provider(&m.provider)?,
            })
        })
        .collect()
}

fn refined_from_log(results: &[TrialResult], questions: &[McQuestion], n_trials: usize) -> Result<Vec<String>, CliError> {
    let baseline: Vec<TrialResult> = results.iter().filter(|r| r.mode == EvalMode::Baseline).cloned().collect();
    let models: Vec<String> = baseline
        .iter()
        .map(|r| r.model_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if models.is_empty() {
        return Err(CliError::Invalid("trial log has no baseline trials to refine from".into()));
    }
    Ok(refine_testset(&baseline, &models, questions, n_trials)?)
}

fn read_refined(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", path.display())))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn eval(cli: &Cli, cfg: ServiceConfig, cmd: &EvalCommand) -> Result<(), CliError> {
    let files = match cmd {
        EvalCommand::Run { files, .. } | EvalCommand::Refine { files, .. } | EvalCommand::Score { files, .. } => files,
    };
    let questions = load_testset(&files.testset)?;
    let n_trials = files.trials.unwrap_or(cfg.eval.trials);
    if n_trials == 0 {
        return Err(CliError::Invalid("--trials must be at least 1".into()));
    }
    match cmd {
        EvalCommand::Run { mode, .. } => {
            let models = eval_models(&cfg)?;
            let engine = match mode {
                EvalMode::Rag => {
                    let store = open_store(&cfg)?;
                    let providers = Providers::from_config(&cfg)?;
                    Some(AppState::new(cfg.clone(), store, providers, None).qa_engine())
                }
                EvalMode::Baseline => None,
            };
            let plan = TrialPlan {
                models: &models,
                questions: &questions,
                n_trials,
                mode: *mode,
                params: cfg.search,
                parallelism: cfg.eval.parallelism,
            };
            let results = run_trials(&plan, engine.as_ref(), Some(&files.log))?;
            let failed = results.iter().filter(|r| r.parse_failed).count();
            if cli.verbose {
                for r in results.iter().filter(|r| r.error.is_some()) {
                    eprintln!("warning: {}/{}/{}: {}", r.model_id, r.qid, r.run_index, r.error.as_deref().unwrap_or(""));
                }
            }
            println!("trials: {} ({mode}), unparsed: {failed}", results.len());
            Ok(())
        }
        EvalCommand::Refine { out, .. } => {
            let results = read_trial_log(&files.log)?;
            let refined = refined_from_log(&results, &questions, n_trials)?;
            let listing: String = refined.iter().map(|q| format!("{q}\n")).collect();
            match out {
                Some(path) => {
                    std::fs::write(path, listing).map_err(|e| CliError::Failed(e.to_string()))?;
                    println!("refined {} of {} questions", refined.len(), questions.len());
                }
                None => print!("{listing}"),
            }
            Ok(())
        }
        EvalCommand::Score { refined, json, .. } => {
            let results = read_trial_log(&files.log)?;
            let refined = match refined {
                Some(path) => read_refined(path)?,
                None => refined_from_log(&results, &questions, n_trials)?,
            };
            let report = score(&results, &questions, &refined)?;
            if *json {
                print_json(&report);
            } else {
                print!("{}", report.to_table());
            }
            Ok(())
        }
    }
}
