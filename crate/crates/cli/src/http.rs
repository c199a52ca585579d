//! Blocking clients for OpenAI-compatible chat-completion and embedding
//! endpoints.

use std::time::Duration;

use litkb_core::config::HttpEndpoint;
use litkb_core::provider::{EmbeddingProvider, ProviderError, TextProvider, TextRequest};
use reqwest::blocking::{Client, RequestBuilder};
use serde::Deserialize;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum ClientSetupError {
    #[error("environment variable {0} is not set")]
    MissingKey(String),
    #[error("cannot build http client: {0}")]
    Build(String),
}

struct Endpoint {
    client: Client,
    base: String,
    model: String,
    key: Option<String>,
    max_retries: u32,
}

impl Endpoint {
    fn new(cfg: &HttpEndpoint) -> Result<Self, ClientSetupError> {
        let key = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| ClientSetupError::MissingKey(var.clone()))?),
            None => None,
        };
        let client = Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| ClientSetupError::Build(e.to_string()))?;
        Ok(Self {
            client,
            base: cfg.endpoint.trim_end_matches('/').to_string(),
            model: cfg.model.clone(),
            key,
            max_retries: cfg.max_retries,
        })
    }

    fn authed(&self, rb: RequestBuilder) -> RequestBuilder {
        match &self.key {
            Some(k) => rb.bearer_auth(k),
            None => rb,
        }
    }

    fn post<T: for<'de> Deserialize<'de>>(&self, path: &str, body: &serde_json::Value) -> Result<T, ProviderError> {
        let url = format!("{}/{path}", self.base);
        let mut attempt = 0;
        loop {
            let result = self
                .authed(self.client.post(&url).json(body))
                .send()
                .map_err(transport)
                .and_then(|resp| {
                    let status = resp.status();
                    if !status.is_success() {
                        let body = resp.text().unwrap_or_default();
                        return Err(ProviderError::Status {
                            status: status.as_u16(),
                            body: body.chars().take(500).collect(),
                        });
                    }
                    resp.json::<T>()
                        .map_err(|e| ProviderError::InvalidResponse(e.to_string()))
                });
            match result {
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    attempt += 1;
                    std::thread::sleep(Duration::from_millis(200 * u64::from(attempt)));
                }
                other => return other,
            }
        }
    }

    fn ping(&self) -> Result<(), ProviderError> {
        let resp = self
            .authed(self.client.get(format!("{}/models", self.base)))
            .send()
            .map_err(transport)?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(ProviderError::Status {
                status: resp.status().as_u16(),
                body: String::new(),
            })
        }
    }
}

fn transport(e: reqwest::Error) -> ProviderError {
    if e.is_timeout() {
        ProviderError::Timeout
    } else {
        ProviderError::Transport(e.to_string())
    }
}

/// `POST {endpoint}/chat/completions` with temperature 0.
pub struct OpenAiText {
    ep: Endpoint,
    name: String,
}

impl OpenAiText {
    pub fn new(cfg: &HttpEndpoint) -> Result<Self, ClientSetupError> {
        Ok(Self {
            ep: Endpoint::new(cfg)?,
            name: cfg.model.clone(),
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

impl TextProvider for OpenAiText {
    fn complete(&self, request: &TextRequest) -> Result<String, ProviderError> {
        let mut messages = Vec::new();
        if let Some(system) = &request.system {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": request.prompt}));
        let body = json!({"model": self.ep.model, "messages": messages, "temperature": 0});
        let resp: ChatResponse = self.ep.post("chat/completions", &body)?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::InvalidResponse("no completion content".into()))
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn ping(&self) -> Result<(), ProviderError> {
        self.ep.ping()
    }
}

/// `POST {endpoint}/embeddings`.
pub struct OpenAiEmbedding {
    ep: Endpoint,
}

impl OpenAiEmbedding {
    pub fn new(cfg: &HttpEndpoint) -> Result<Self, ClientSetupError> {
        Ok(Self { ep: Endpoint::new(cfg)? })
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingRow>,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    index: usize,
    embedding: Vec<f32>,
}

impl EmbeddingProvider for OpenAiEmbedding {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        let body = json!({"model": self.ep.model, "input": texts});
        let mut resp: EmbeddingResponse = self.ep.post("embeddings", &body)?;
        if resp.data.len() != texts.len() {
            return Err(ProviderError::InvalidResponse(format!(
                "{} embeddings for {} inputs",
                resp.data.len(),
                texts.len()
            )));
        }
        resp.data.sort_by_key(|r| r.index);
        Ok(resp.data.into_iter().map(|r| r.embedding).collect())
    }

    fn name(&self) -> &str {
        &self.ep.model
    }

    fn ping(&self) -> Result<(), ProviderError> {
        self.ep.ping()
    }
}
