//! Helpers for the service and CLI tests: a scripted text provider, a mock
//! OpenAI-compatible server and fixture configuration.

#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::routing::{get, post};
use axum::{Json, Router};
use litkb_core::provider::{ProviderError, TextProvider, TextRequest};
use serde_json::{json, Value};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Deterministic replies keyed on prompt shape.
pub fn scripted_reply(system: Option<&str>, prompt: &str) -> String {
    if prompt.starts_with("Does the following question concern") {
        let q = prompt.to_lowercase();
        return if q.contains("paclitaxel") || q.contains("artemisinin") { "yes" } else { "no" }.into();
    }
    if prompt.contains("Answer the following multiple-choice question") {
        return "A".into();
    }
    if prompt.contains("focused sub-questions") {
        return "Fed-batch fermentation was run for five days.\n\
                Artemisinic acid was converted to artemisinin by a chemical sequence that ends with singlet-oxygen photooxidation."
            .into();
    }
    if prompt.contains("Synthesize the sub-answers") {
        let refs: Vec<&str> = prompt
            .lines()
            .filter(|l| l.starts_with("[ref "))
            .filter_map(|l| l.split(']').next())
            .collect();
        return format!("Combined findings {}.", refs.iter().map(|r| format!("{r}]")).collect::<String>());
    }
    let refs: Vec<String> = prompt
        .lines()
        .filter_map(|l| l.strip_prefix("[ref "))
        .filter_map(|r| r.split(']').next())
        .map(|k| format!("[ref {k}]"))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if prompt.starts_with("Review passages:") {
        return format!("Overview drawing on {}.", refs.join(" "));
    }
    if system.is_some() {
        if refs.is_empty() {
            return "The knowledge base has no support for this question.".into();
        }
        return format!("Supported by {}.", refs.join(" "));
    }
    String::new()
}

pub struct Scripted;

impl TextProvider for Scripted {
    fn complete(&self, request: &TextRequest) -> Result<String, ProviderError> {
        Ok(scripted_reply(request.system.as_deref(), &request.prompt))
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

/// Mock OpenAI-compatible server serving [`scripted_reply`].
pub struct MockLlm {
    pub addr: SocketAddr,
    pub calls: Arc<AtomicUsize>,
}

impl MockLlm {
    pub fn start() -> Self {
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = calls.clone();
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
            rt.block_on(async move {
                let app = Router::new()
                    .route(
                        "/v1/chat/completions",
                        post(move |Json(body): Json<Value>| {
                            counter.fetch_add(1, Ordering::SeqCst);
                            async move {
                                let msgs = body["messages"].as_array().cloned().unwrap_or_default();
                                let system = msgs.iter().find(|m| m["role"] == "system").and_then(|m| m["content"].as_str());
                                let prompt = msgs.iter().find(|m| m["role"] == "user").and_then(|m| m["content"].as_str()).unwrap_or("");
                                let reply = scripted_reply(system, prompt);
                                Json(json!({"choices": [{"message": {"role": "assistant", "content": reply}}]}))
                            }
                        }),
                    )
                    .route("/v1/models", get(|| async { Json(json!({"data": []})) }));
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, app).await.unwrap();
            });
        });
        Self {
            addr: rx.recv().unwrap(),
            calls,
        }
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}/v1", self.addr)
    }
}

/// Writes a config using the hash embedder and the fixture compound table;
/// the text provider points at `llm` when given.
pub fn write_config(dir: &Path, dimension: usize, llm: Option<&MockLlm>) -> PathBuf {
    let mut text = format!(
        "store_path = \"kb.store\"\ndimension = {dimension}\n\n\
         [enrichment]\nclean = false\nmerge = false\nquestions = false\n\n\
         [providers.compounds]\nkind = \"fixture\"\npath = \"{}\"\n",
        fixtures_dir().join("compounds.tsv").display()
    );
    if let Some(llm) = llm {
        text.push_str(&format!(
            "\n[providers.text]\nkind = \"openai_compatible\"\nendpoint = \"{}\"\nmodel = \"mock\"\n",
            llm.endpoint()
        ));
    }
    let path = dir.join("litkb.toml");
    std::fs::write(&path, text).unwrap();
    path
}
