//! Chat-completion access for every model role in the pipeline.
//!
//! Callers never talk to a backend directly: they go through [`Gateway`],
//! which renders a named template, builds a [`ChatRequest`] keyed by the
//! template name and a digest of its bindings, and books the response's
//! token counts into the caller's [`UsageLedger`].

mod remote;
mod scripted;
pub mod template;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use remote::{RemoteBackend, RemoteSettings};
pub use scripted::{write_script, ScriptEntry, ScriptError, ScriptedBackend};
pub use template::{PromptCatalog, PromptTemplate};

/// Placeholder name to bound text. Ordered so digests are canonical.
pub type Bindings = BTreeMap<String, String>;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("[{template}] transport failure talking to {endpoint}: {message}")]
    Transport {
        template: String,
        endpoint: String,
        message: String,
    },
    #[error("[{template}] provider returned status {status}: {body}")]
    Provider {
        template: String,
        status: u16,
        body: String,
    },
    #[error("[{template}] malformed provider response: {reason}")]
    Malformed { template: String, reason: String },
    #[error("[{template}] no scripted response for digest {digest}")]
    ScriptMiss { template: String, digest: String },
    #[error("[{template}] unbound placeholder(s): {}", missing.join(", "))]
    MissingBinding { template: String, missing: Vec<String> },
    #[error("unknown prompt template `{0}`")]
    UnknownTemplate(String),
    #[error("[{template}] invalid request: {reason}")]
    InvalidRequest { template: String, reason: String },
}

impl GatewayError {
    pub fn template(&self) -> &str {
        match self {
            GatewayError::Transport { template, .. }
            | GatewayError::Provider { template, .. }
            | GatewayError::Malformed { template, .. }
            | GatewayError::ScriptMiss { template, .. }
            | GatewayError::MissingBinding { template, .. }
            | GatewayError::InvalidRequest { template, .. } => template,
            GatewayError::UnknownTemplate(name) => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    /// Template the user text was rendered from.
    pub template: String,
    /// Digest of the template bindings; together with `template` this is the script key.
    pub digest: String,
    pub system_text: String,
    pub user_text: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let invalid = |reason: &str| {
            Err(GatewayError::InvalidRequest {
                template: self.template.clone(),
                reason: reason.to_string(),
            })
        };
        if self.user_text.trim().is_empty() {
            return invalid("user text is empty");
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return invalid("temperature outside [0, 1]");
        }
        if self.max_output_tokens == 0 {
            return invalid("max_output_tokens must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Counts were estimated locally because the provider did not report them.
    #[serde(default)]
    pub estimated: bool,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// Canonical digest of a binding map (hex SHA-256 of its JSON form).
pub fn binding_digest(bindings: &Bindings) -> String {
    let canonical = serde_json::to_string(bindings).expect("string map serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Which configured model serves a call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Main,
    Keywords,
    Judge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallTrace {
    pub template: String,
    pub digest: String,
    /// 1-based chain step, absent for decomposition and synthesis.
    pub step: Option<usize>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    #[serde(default)]
    pub estimated: bool,
}

/// Token totals for one run. Additive updates are safe from any thread.
#[derive(Debug, Default)]
pub struct UsageLedger {
    prompt: AtomicU64,
    completion: AtomicU64,
    estimated: AtomicBool,
    calls: Mutex<Vec<CallTrace>>,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, trace: CallTrace) {
        self.prompt.fetch_add(trace.prompt_tokens, Ordering::Relaxed);
        self.completion.fetch_add(trace.completion_tokens, Ordering::Relaxed);
        if trace.estimated {
            self.estimated.store(true, Ordering::Relaxed);
        }
        self.calls.lock().expect("ledger poisoned").push(trace);
    }

    pub fn prompt_tokens(&self) -> u64 {
        self.prompt.load(Ordering::Relaxed)
    }

    pub fn completion_tokens(&self) -> u64 {
        self.completion.load(Ordering::Relaxed)
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens() + self.completion_tokens()
    }

    pub fn any_estimated(&self) -> bool {
        self.estimated.load(Ordering::Relaxed)
    }

    pub fn calls(&self) -> Vec<CallTrace> {
        self.calls.lock().expect("ledger poisoned").clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatewaySettings {
    pub system_text: String,
    pub main_model: String,
    pub ek_model: String,
    pub judge_model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self {
            system_text: "You are a helpful assistant.".to_string(),
            main_model: "gpt-4o".to_string(),
            ek_model: "gpt-4o".to_string(),
            judge_model: "gpt-4o".to_string(),
            temperature: 0.0,
            max_output_tokens: 512,
        }
    }
}

/// Template rendering plus a backend plus model-role settings.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    catalog: PromptCatalog,
    settings: GatewaySettings,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, catalog: PromptCatalog, settings: GatewaySettings) -> Self {
        Self {
            backend,
            catalog,
            settings,
        }
    }

    pub fn catalog(&self) -> &PromptCatalog {
        &self.catalog
    }

    pub fn settings(&self) -> &GatewaySettings {
        &self.settings
    }

    /// Render `template` with `bindings` into a request for `role`.
    pub fn request(&self, role: Role, template: &str, bindings: &Bindings) -> Result<ChatRequest, GatewayError> {
        let user_text = self.catalog.get(template)?.render(bindings)?;
        let model_id = match role {
            Role::Main => &self.settings.main_model,
            Role::Keywords => &self.settings.ek_model,
            Role::Judge => &self.settings.judge_model,
        };
        let request = ChatRequest {
            template: template.to_string(),
            digest: binding_digest(bindings),
            system_text: self.settings.system_text.clone(),
            user_text,
            model_id: model_id.clone(),
            temperature: self.settings.temperature,
            max_output_tokens: self.settings.max_output_tokens,
        };
        request.validate()?;
        Ok(request)
    }

    /// One completed call, booked into `ledger`.
    pub fn call(
        &self,
        role: Role,
        template: &str,
        bindings: &Bindings,
        step: Option<usize>,
        ledger: &UsageLedger,
    ) -> Result<ChatResponse, GatewayError> {
        let request = self.request(role, template, bindings)?;
        let response = self.backend.complete(&request)?;
        ledger.record(CallTrace {
            template: request.template,
            digest: request.digest,
            step,
            prompt_tokens: response.prompt_tokens,
            completion_tokens: response.completion_tokens,
            estimated: response.estimated,
        });
        Ok(response)
    }
}

/// Build a binding map from string pairs.
pub fn bindings<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Bindings {
    pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect()
}
