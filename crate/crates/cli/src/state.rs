//! Provider wiring and the shared state behind both the service and the CLI.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use litkb_core::config::{CompoundProviderConfig, EmbeddingProviderConfig, TextProviderConfig};
use litkb_core::provider::{
    CompoundProvider, EmbeddingProvider, FixtureCompoundProvider, HashEmbedder, NoCompounds, ProviderError,
    TextProvider, TextRequest,
};
use litkb_core::qa::QaDeps;
use litkb_core::store::LoadError;
use litkb_core::{QaEngine, ResearchEngine, ServiceConfig, VectorStore};
use thiserror::Error;

use crate::http::{ClientSetupError, OpenAiEmbedding, OpenAiText};

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("cannot load store {path}: {source}")]
    Store {
        path: String,
        #[source]
        source: LoadError,
    },
    #[error("{provider} provider: {source}")]
    Provider {
        provider: &'static str,
        #[source]
        source: ClientSetupError,
    },
    #[error("compound table: {0}")]
    Compounds(ProviderError),
}

/// Text provider used when none is configured; every call fails.
pub struct UnconfiguredText;

impl TextProvider for UnconfiguredText {
    fn complete(&self, _request: &TextRequest) -> Result<String, ProviderError> {
        Err(ProviderError::NotConfigured("no text provider in config".into()))
    }

    fn name(&self) -> &str {
        "none"
    }

    fn ping(&self) -> Result<(), ProviderError> {
        Err(ProviderError::NotConfigured("no text provider in config".into()))
    }
}

#[derive(Clone)]
pub struct Providers {
    pub text: Arc<dyn TextProvider>,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub compounds: Arc<dyn CompoundProvider>,
}

pub fn text_provider(cfg: &TextProviderConfig) -> Result<Arc<dyn TextProvider>, StartupError> {
    Ok(match cfg {
        TextProviderConfig::None => Arc::new(UnconfiguredText),
        TextProviderConfig::OpenaiCompatible(ep) => Arc::new(
            OpenAiText::new(ep).map_err(|source| StartupError::Provider { provider: "text", source })?,
        ),
    })
}

impl Providers {
    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, StartupError> {
        let embedder: Arc<dyn EmbeddingProvider> = match &cfg.providers.embedding {
            EmbeddingProviderConfig::Hash => Arc::new(HashEmbedder::new(cfg.dimension)),
            EmbeddingProviderConfig::OpenaiCompatible(ep) => Arc::new(
                OpenAiEmbedding::new(ep).map_err(|source| StartupError::Provider {
                    provider: "embedding",
                    source,
                })?,
            ),
        };
        let compounds: Arc<dyn CompoundProvider> = match &cfg.providers.compounds {
            CompoundProviderConfig::None => Arc::new(NoCompounds),
            CompoundProviderConfig::Fixture { path } => {
                Arc::new(FixtureCompoundProvider::from_path(path).map_err(StartupError::Compounds)?)
            }
        };
        Ok(Self {
            text: text_provider(&cfg.providers.text)?,
            embedder,
            compounds,
        })
    }
}

/// Opens the configured store, or an empty one when the file does not
/// exist yet. The dimension must match the configuration.
pub fn open_store(cfg: &ServiceConfig) -> Result<VectorStore, StartupError> {
    let path = &cfg.store_path;
    if !path.exists() {
        return Ok(VectorStore::with_max_questions(cfg.dimension, cfg.enrichment.max_questions));
    }
    VectorStore::load_with_dimension(path, cfg.dimension).map_err(|source| StartupError::Store {
        path: path.display().to_string(),
        source,
    })
}

pub struct AppState {
    pub config: ServiceConfig,
    pub store: Arc<VectorStore>,
    pub providers: Providers,
    /// Where ingests are persisted; `None` keeps the store in memory.
    pub store_path: Option<PathBuf>,
    /// Serializes ingest + persist so file writes never interleave.
    pub ingest_lock: Mutex<()>,
}

impl AppState {
    pub fn new(config: ServiceConfig, store: VectorStore, providers: Providers, store_path: Option<PathBuf>) -> Self {
        Self {
            config,
            store: Arc::new(store),
            providers,
            store_path,
            ingest_lock: Mutex::new(()),
        }
    }

    pub fn from_config(config: ServiceConfig) -> Result<Self, StartupError> {
        let store = open_store(&config)?;
        let providers = Providers::from_config(&config)?;
        let path = config.store_path.clone();
        Ok(Self::new(config, store, providers, Some(path)))
    }

    pub fn qa_engine(&self) -> QaEngine {
        QaEngine::new(
            QaDeps {
                store: self.store.clone(),
                text: self.providers.text.clone(),
                embedder: self.providers.embedder.clone(),
                compounds: self.providers.compounds.clone(),
            },
            self.config.qa_config(),
        )
    }

    pub fn research_engine(&self) -> ResearchEngine {
        ResearchEngine::new(self.qa_engine(), self.config.research.parallelism)
    }
}
