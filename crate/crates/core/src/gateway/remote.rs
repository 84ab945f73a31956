use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError};
use crate::http::{JsonClient, PostError};
use crate::text::whitespace_tokens;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteSettings {
    /// Base URL up to and excluding `/chat/completions`, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    /// Environment variable holding the API key. Unset variable means no auth header.
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for RemoteSettings {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".to_string(),
            api_key_env: "OPENAI_API_KEY".to_string(),
            max_in_flight: 4,
            timeout_secs: 120,
        }
    }
}

/// OpenAI-compatible `/chat/completions` client.
pub struct RemoteBackend {
    endpoint: String,
    api_key: Option<String>,
    client: JsonClient,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint", &self.endpoint)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

#[derive(Deserialize)]
struct CompletionBody {
    #[serde(default)]
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

impl RemoteBackend {
    pub fn new(settings: &RemoteSettings) -> Self {
        let api_key = std::env::var(&settings.api_key_env).ok().filter(|k| !k.is_empty());
        Self::with_key(settings, api_key)
    }

    pub fn with_key(settings: &RemoteSettings, api_key: Option<String>) -> Self {
        Self {
            endpoint: format!("{}/chat/completions", settings.base_url.trim_end_matches('/')),
            api_key,
            client: JsonClient::new(Duration::from_secs(settings.timeout_secs), settings.max_in_flight),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl ChatBackend for RemoteBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let body = json!({
            "model": request.model_id,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let raw = self
            .client
            .post(&self.endpoint, self.api_key.as_deref(), &body)
            .map_err(|e| match e {
                PostError::Transport(message) => GatewayError::Transport {
                    template: request.template.clone(),
                    endpoint: self.endpoint.clone(),
                    message,
                },
                PostError::Status { status, body } => GatewayError::Provider {
                    template: request.template.clone(),
                    status,
                    body,
                },
            })?;
        let malformed = |reason: String| GatewayError::Malformed {
            template: request.template.clone(),
            reason,
        };
        let parsed: CompletionBody = serde_json::from_str(&raw).map_err(|e| malformed(e.to_string()))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| malformed("response carries no completion text".to_string()))?;
        let counts = parsed
            .usage
            .and_then(|u| Some((u.prompt_tokens?, u.completion_tokens?)));
        let (prompt_tokens, completion_tokens, estimated) = match counts {
            Some((p, c)) => (p, c, false),
            None => (
                whitespace_tokens(&request.system_text) + whitespace_tokens(&request.user_text),
                whitespace_tokens(&text),
                true,
            ),
        };
        Ok(ChatResponse {
            text,
            prompt_tokens,
            completion_tokens,
            estimated,
        })
    }
}
