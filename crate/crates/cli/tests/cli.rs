mod common;

use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use common::*;
use litkb::state::AppState;
use litkb_core::eval::{load_testset, read_trial_log, refine_testset, score, EvalMode};
use litkb_core::{QaRequest, ServiceConfig};
use serde_json::Value;

fn litkb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_litkb")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ingest_fixture(config: &Path) -> Output {
    let manifest = fixtures_dir().join("corpus/manifest.json");
    litkb(&["--config", config.to_str().unwrap(), "ingest", manifest.to_str().unwrap()])
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_1() {
    let out = litkb(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Usage:"));
    let out = litkb(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("eval"));
}

#[test]
fn empty_query_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 64, None);
    let out = litkb(&["--config", cfg.to_str().unwrap(), "query", ""]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("query is empty"));
}

#[test]
fn ingest_prints_fixture_counts_and_writes_store() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 64, None);
    let out = ingest_fixture(&cfg);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    for line in ["documents: 10", "screened out: 0", "chunks: 38", "questions: 0", "store: 10 documents, 38 chunks, 0 questions"] {
        assert!(text.lines().any(|l| l == line), "missing {line:?} in\n{text}");
    }
    assert!(dir.path().join("kb.store").exists());

    // a second ingest of the same manifest replaces rather than duplicates
    let again = ingest_fixture(&cfg);
    assert!(stdout(&again).contains("store: 10 documents, 38 chunks, 0 questions"));
}

#[test]
fn bad_manifest_exits_1_and_corrupt_store_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 64, None);
    let out = litkb(&["--config", cfg.to_str().unwrap(), "ingest", "/nonexistent/manifest.json"]);
    assert_eq!(out.status.code(), Some(1));

    std::fs::write(dir.path().join("kb.store"), b"LKBSTORE garbage").unwrap();
    let out = litkb(&["--config", cfg.to_str().unwrap(), "query", "anything"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cannot load store"));

    let cfg_bad = dir.path().join("bad.toml");
    std::fs::write(&cfg_bad, "dimension = 0\n").unwrap();
    let out = litkb(&["--config", cfg_bad.to_str().unwrap(), "query", "x"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn query_prints_citations_before_answer() {
    let llm = MockLlm::start();
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 128, Some(&llm));
    assert_eq!(ingest_fixture(&cfg).status.code(), Some(0));
    let q = "Paclitaxel binds the beta-tubulin subunit";
    let out = litkb(&["--config", cfg.to_str().unwrap(), "query", q, "--min-score", "0.0"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let molecules = text.find("Molecules:").expect("molecule block");
    let refs = text.find("References:").expect("reference block");
    let answer = text.find("Supported by").expect("answer");
    assert!(molecules < refs && refs < answer, "{text}");
    assert!(text.contains("  [1] "));
    assert!(llm.calls.load(std::sync::atomic::Ordering::SeqCst) >= 2);
}

#[test]
fn query_without_text_provider_keeps_citations_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 128, None);
    ingest_fixture(&cfg);
    let out = litkb(&["--config", cfg.to_str().unwrap(), "query", "taxadiene", "--min-score", "0.0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).starts_with("References:"));
    assert!(stderr(&out).contains("answer generation failed"));
}

#[test]
fn cli_and_api_payloads_match() {
    let llm = MockLlm::start();
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), 128, Some(&llm));
    ingest_fixture(&cfg_path);
    let q = "Menthol activates the cold-sensing TRPM8 channel.";
    let out = litkb(&["--config", cfg_path.to_str().unwrap(), "query", q, "--json"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let from_cli: Value = serde_json::from_slice(&out.stdout).unwrap();

    let cfg = ServiceConfig::load(&cfg_path).unwrap();
    let state = Arc::new(AppState::from_config(cfg).unwrap());
    // both sides go through the same text form so float parsing is identical
    let text = serde_json::to_string(&litkb::ops::answer(&state, &QaRequest::new(q)).unwrap()).unwrap();
    let from_api: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(from_cli, from_api);
    assert_eq!(from_cli["citations"][0]["doc_id"], "res-menthol");

    let out = litkb(&["--config", cfg_path.to_str().unwrap(), "research", q, "--max-subquestions", "2", "--json"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["sub_answers"].as_array().unwrap().len(), 2);
}

#[test]
fn eval_run_refine_score_round_trip() {
    let llm = MockLlm::start();
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 64, Some(&llm));
    let cfg_s = cfg.to_str().unwrap();
    let testset = fixtures_dir().join("mcq_sample.jsonl");
    let log = dir.path().join("trials.jsonl");
    let common = ["--testset", testset.to_str().unwrap(), "--log", log.to_str().unwrap(), "--trials", "2"];

    let mut args = vec!["--config", cfg_s, "eval", "run"];
    args.extend(common);
    let out = litkb(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("trials: 252 (baseline)"));
    let calls = llm.calls.load(std::sync::atomic::Ordering::SeqCst);
    // resuming a finished log makes no calls
    litkb(&args);
    assert_eq!(llm.calls.load(std::sync::atomic::Ordering::SeqCst), calls);

    let refined_path = dir.path().join("refined.txt");
    let mut args = vec!["--config", cfg_s, "eval", "refine", "--out", refined_path.to_str().unwrap()];
    args.extend(common);
    assert_eq!(litkb(&args).status.code(), Some(0));

    // the always-"A" model is unanimous exactly on the questions whose key is A
    let questions = load_testset(&testset).unwrap();
    let want: Vec<String> = questions.iter().filter(|q| q.correct != 0).map(|q| q.qid.clone()).collect();
    let refined: Vec<String> = std::fs::read_to_string(&refined_path).unwrap().lines().map(String::from).collect();
    assert_eq!(refined, want);

    let mut args = vec!["--config", cfg_s, "eval", "score", "--json", "--refined", refined_path.to_str().unwrap()];
    args.extend(common);
    let out = litkb(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let from_cli: Value = serde_json::from_slice(&out.stdout).unwrap();
    let results = read_trial_log(&log).unwrap();
    let in_process = score(&results, &questions, &refine_testset(&results, &["default".into()], &questions, 2).unwrap()).unwrap();
    let text = serde_json::to_string(&in_process).unwrap();
    assert_eq!(from_cli, serde_json::from_str::<Value>(&text).unwrap());
    let s = in_process.score_for("default", EvalMode::Baseline).unwrap();
    assert_eq!(s.overall.correct, 0);

    let mut args = vec!["--config", cfg_s, "eval", "score"];
    args.extend(common);
    let table = stdout(&litkb(&args));
    assert!(table.starts_with(&format!("refined questions: {}", want.len())));
}

#[test]
fn serve_answers_health_and_reports_busy_port() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 32, None);
    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = busy.local_addr().unwrap().to_string();
    let out = litkb(&["--config", cfg.to_str().unwrap(), "serve", "--listen", &addr]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cannot serve"));
    drop(busy);

    let free = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().to_string();
    let mut child = Command::new(env!("CARGO_BIN_EXE_litkb"))
        .args(["--config", cfg.to_str().unwrap(), "serve", "--listen", &free])
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let client = reqwest::blocking::Client::new();
    let mut health = None;
    for _ in 0..100 {
        if let Ok(resp) = client.get(format!("http://{free}/api/health")).send() {
            health = Some(resp.json::<Value>().unwrap());
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let health = health.expect("service came up");
    assert_eq!(health["counts"]["docs"], 0);
    assert_eq!(health["dimension"], 32);
}

#[test]
fn readme_config_example_parses() {
    let readme = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md")).unwrap();
    let start = readme.find("```toml\n").unwrap() + "```toml\n".len();
    let end = start + readme[start..].find("```").unwrap();
    let cfg = ServiceConfig::from_toml_str(&readme[start..end]).unwrap();
    let defaults = ServiceConfig::default();
    assert_eq!(cfg.search, defaults.search);
    assert_eq!(cfg.enrichment, defaults.enrichment);
    assert_eq!(cfg.research, defaults.research);
    assert_eq!(cfg.dimension, defaults.dimension);
    assert_eq!(cfg.eval.trials, defaults.eval.trials);
    assert_eq!(cfg.eval.models.len(), 1);
}
