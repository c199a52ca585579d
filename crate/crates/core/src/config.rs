//! Service configuration, read from TOML.
//!
//! Every field has a default so an empty file is a valid configuration.
//! Credentials are never stored here; provider sections name the
//! environment variable that holds them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enrich::{DEFAULT_DIMENSION, DEFAULT_MAX_QUESTIONS};
use crate::eval::DEFAULT_TRIALS;
use crate::ingest::DEFAULT_MIN_CHUNK_CHARS;
use crate::qa::{QaConfig, DEFAULT_MAX_COMPOUNDS, DEFAULT_PROMPT_BUDGET};
use crate::research::{DEFAULT_MAX_SUBQUESTIONS, DEFAULT_PARALLELISM, MAX_SUBQUESTIONS_LIMIT};
use crate::store::SearchParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub store_path: PathBuf,
    pub dimension: usize,
    pub listen: String,
    pub prompt_budget: usize,
    pub max_compounds: usize,
    pub relevance_topic: String,
    pub search: SearchParams,
    pub enrichment: EnrichmentConfig,
    pub research: ResearchConfig,
    pub eval: EvalConfig,
    pub providers: ProvidersConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            store_path: PathBuf::from("litkb.store"),
            dimension: DEFAULT_DIMENSION,
            listen: "127.0.0.1:8080".into(),
            prompt_budget: DEFAULT_PROMPT_BUDGET,
            max_compounds: DEFAULT_MAX_COMPOUNDS,
            relevance_topic: QaConfig::default().relevance_topic,
            search: SearchParams::default(),
            enrichment: EnrichmentConfig::default(),
            research: ResearchConfig::default(),
            eval: EvalConfig::default(),
            providers: ProvidersConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrichmentConfig {
    pub max_questions: usize,
    pub min_chunk_chars: usize,
    pub embed_batch: usize,
    pub clean: bool,
    pub merge: bool,
    pub questions: bool,
    /// When set, documents are screened for relevance to this topic.
    pub screen_topic: Option<String>,
}

impl Default for EnrichmentConfig {
    fn default() -> Self {
        Self {
            max_questions: DEFAULT_MAX_QUESTIONS,
            min_chunk_chars: DEFAULT_MIN_CHUNK_CHARS,
            embed_batch: 32,
            clean: true,
            merge: true,
            questions: true,
            screen_topic: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResearchConfig {
    pub max_subquestions: usize,
    pub parallelism: usize,
}

impl Default for ResearchConfig {
    fn default() -> Self {
        Self {
            max_subquestions: DEFAULT_MAX_SUBQUESTIONS,
            parallelism: DEFAULT_PARALLELISM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub trials: usize,
    pub parallelism: usize,
    /// Models compared by `eval run`; empty means the main text provider.
    pub models: Vec<EvalModelConfig>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            trials: DEFAULT_TRIALS,
            parallelism: 4,
            models: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalModelConfig {
    pub id: String,
    pub provider: TextProviderConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub text: TextProviderConfig,
    pub embedding: EmbeddingProviderConfig,
    pub compounds: CompoundProviderConfig,
}

/// Connection details for an OpenAI-compatible HTTP endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpEndpoint {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_retries() -> u32 {
    2
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TextProviderConfig {
    /// Every call fails with a not-configured error.
    #[default]
    None,
    OpenaiCompatible(HttpEndpoint),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingProviderConfig {
    /// Deterministic hash embedder.
    #[default]
    Hash,
    OpenaiCompatible(HttpEndpoint),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CompoundProviderConfig {
    #[default]
    None,
    /// Tab-separated table: name, smiles, url, keywords.
    Fixture { path: PathBuf },
}

impl ServiceConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ServiceConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_relative(dir);
        }
        Ok(cfg)
    }

    fn resolve_relative(&mut self, dir: &Path) {
        if self.store_path.is_relative() {
            self.store_path = dir.join(&self.store_path);
        }
        if let CompoundProviderConfig::Fixture { path } = &mut self.providers.compounds {
            if path.is_relative() {
                *path = dir.join(&*path);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.dimension == 0 {
            return bad("dimension must be positive".into());
        }
        self.search
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("search: {e}")))?;
        if self.prompt_budget == 0 {
            return bad("prompt_budget must be positive".into());
        }
        if self.enrichment.max_questions == 0 {
            return bad("enrichment.max_questions must be at least 1".into());
        }
        if self.enrichment.embed_batch == 0 {
            return bad("enrichment.embed_batch must be at least 1".into());
        }
        if !(1..=MAX_SUBQUESTIONS_LIMIT).contains(&self.research.max_subquestions) {
            return bad(format!(
                "research.max_subquestions must be in 1..={MAX_SUBQUESTIONS_LIMIT}"
            ));
        }
        if self.research.parallelism == 0 || self.eval.parallelism == 0 {
            return bad("parallelism caps must be at least 1".into());
        }
        if self.eval.trials == 0 {
            return bad("eval.trials must be at least 1".into());
        }
        let mut ids = std::collections::HashSet::new();
        for m in &self.eval.models {
            if m.id.trim().is_empty() || !ids.insert(m.id.as_str()) {
                return bad(format!("eval.models: empty or duplicate id {:?}", m.id));
            }
        }
        Ok(())
    }

    pub fn qa_config(&self) -> QaConfig {
        QaConfig {
            prompt_budget: self.prompt_budget,
            max_compounds: self.max_compounds,
            relevance_topic: self.relevance_topic.clone(),
            dimension: self.dimension,
            embed_batch: self.enrichment.embed_batch,
        }
    }

    pub fn pipeline_options(&self) -> crate::pipeline::IngestOptions {
        crate::pipeline::IngestOptions {
            clean: self.enrichment.clean,
            merge: self.enrichment.merge,
            questions: self.enrichment.questions,
            max_questions: self.enrichment.max_questions,
            min_chunk_chars: self.enrichment.min_chunk_chars,
            screen_topic: self.enrichment.screen_topic.clone(),
            dimension: self.dimension,
            embed_batch: self.enrichment.embed_batch,
        }
    }
}
