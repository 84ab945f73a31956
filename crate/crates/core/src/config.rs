//! Application configuration: one JSON document, validated on load.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{
    ChatBackend, Gateway, GatewaySettings, PromptCatalog, RemoteBackend, RemoteSettings, ScriptError, ScriptedBackend,
};
use crate::orchestrator::{Pipeline, PipelineConfig};
use crate::retrieval::{read_corpus, CorpusIndex, RemoteRetriever, RetrievalError, Retriever};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Failure while assembling components from a valid config.
#[derive(Debug, Error)]
pub enum SetupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("script: {0}")]
    Script(#[from] ScriptError),
    #[error("prompt override: {0}")]
    Prompt(std::io::Error),
    #[error("corpus: {0}")]
    Corpus(#[from] RetrievalError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    #[default]
    Local,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub mode: RetrievalMode,
    pub top_n: usize,
    pub backup_k: usize,
    /// Search endpoint for `remote` mode.
    pub remote_url: Option<String>,
    pub corpus: Option<PathBuf>,
    /// Persisted index; built from `corpus` and written here when missing.
    pub index_cache: Option<PathBuf>,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            mode: RetrievalMode::Local,
            top_n: p.top_n,
            backup_k: p.backup_k,
            remote_url: None,
            corpus: None,
            index_cache: None,
            timeout_secs: 30,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrchestratorConfig {
    pub max_chain_length: usize,
    pub unanswerable_token: String,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            max_chain_length: p.max_chain_length,
            unanswerable_token: p.unanswerable_token,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub gateway: GatewaySettings,
    pub remote: RemoteSettings,
    /// Scripted backend file; when set, no remote model is contacted.
    pub scripted: Option<PathBuf>,
    pub retrieval: RetrievalConfig,
    pub orchestrator: OrchestratorConfig,
    /// Template name to replacement file.
    pub prompts: BTreeMap<String, PathBuf>,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl AppConfig {
    /// Parse, resolve relative paths against the file's directory, validate.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: AppConfig = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut config.scripted);
        resolve(base, &mut config.retrieval.corpus);
        resolve(base, &mut config.retrieval.index_cache);
        for p in config.prompts.values_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let r = &self.retrieval;
        if r.top_n == 0 {
            return bad("retrieval.top_n must be at least 1");
        }
        if r.backup_k == 0 {
            return bad("retrieval.backup_k must be at least 1");
        }
        if r.max_in_flight == 0 || self.remote.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1");
        }
        if r.mode == RetrievalMode::Remote && r.remote_url.is_none() {
            return bad("retrieval.mode remote requires retrieval.remote_url");
        }
        if self.orchestrator.max_chain_length == 0 {
            return bad("orchestrator.max_chain_length must be at least 1");
        }
        if self.orchestrator.unanswerable_token.trim().is_empty() {
            return bad("orchestrator.unanswerable_token must not be empty");
        }
        if !(0.0..=2.0).contains(&self.gateway.temperature) {
            return bad("gateway.temperature must lie in [0, 2]");
        }
        let catalog = PromptCatalog::default();
        if let Some(name) = self.prompts.keys().find(|n| catalog.get(n).is_err()) {
            return Err(ConfigError::Invalid(format!("unknown prompt template `{name}`")));
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration JSON.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            top_n: self.retrieval.top_n,
            backup_k: self.retrieval.backup_k,
            max_chain_length: self.orchestrator.max_chain_length,
            unanswerable_token: self.orchestrator.unanswerable_token.clone(),
        }
    }

    pub fn backend(&self) -> Result<Arc<dyn ChatBackend>, SetupError> {
        Ok(match &self.scripted {
            Some(path) => Arc::new(ScriptedBackend::load(path)?),
            None => Arc::new(RemoteBackend::new(&self.remote)),
        })
    }

    pub fn gateway(&self) -> Result<Gateway, SetupError> {
        let catalog = PromptCatalog::default()
            .with_overrides(&self.prompts)
            .map_err(SetupError::Prompt)?;
        Ok(Gateway::new(self.backend()?, catalog, self.gateway.clone()))
    }

    /// The document store: the index cache when present, else the corpus.
    pub fn store(&self) -> Result<Arc<CorpusIndex>, SetupError> {
        let r = &self.retrieval;
        if let Some(cache) = r.index_cache.as_ref().filter(|c| c.exists()) {
            return Ok(Arc::new(CorpusIndex::load(cache)?));
        }
        let corpus = r
            .corpus
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("retrieval.corpus (or an existing index_cache) is required".into()))?;
        let index = CorpusIndex::build(read_corpus(corpus)?)?;
        if let Some(cache) = &r.index_cache {
            index.save(std::io::BufWriter::new(
                std::fs::File::create(cache).map_err(RetrievalError::Io)?,
            ))?;
        }
        Ok(Arc::new(index))
    }

    pub fn retriever(&self, store: Arc<CorpusIndex>) -> Arc<dyn Retriever> {
        let r = &self.retrieval;
        match (r.mode, &r.remote_url) {
            (RetrievalMode::Remote, Some(url)) => Arc::new(RemoteRetriever::new(
                url.clone(),
                store,
                Duration::from_secs(r.timeout_secs),
                r.max_in_flight,
            )),
            _ => store,
        }
    }

    pub fn pipeline(&self) -> Result<Pipeline, SetupError> {
        let store = self.store()?;
        Ok(
            Pipeline::new(self.gateway()?, self.retriever(store), self.pipeline_config())
                .with_config_digest(self.digest()),
        )
    }
}
