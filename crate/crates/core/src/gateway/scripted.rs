use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError};
use crate::text::whitespace_tokens;

/// One line of a script file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub template: String,
    pub digest: String,
    pub response_text: String,
    /// When omitted, whitespace token counts of the prompt and response are reported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("reading script: {0}")]
    Io(#[from] std::io::Error),
    #[error("script line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("script has conflicting responses for {template}/{digest}")]
    Conflict { template: String, digest: String },
}

/// Deterministic backend answering from a fixed table keyed by
/// (template name, binding digest).
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    entries: BTreeMap<(String, String), ScriptEntry>,
}

impl ScriptedBackend {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Result<Self, ScriptError> {
        let mut map: BTreeMap<(String, String), ScriptEntry> = BTreeMap::new();
        for entry in entries {
            let key = (entry.template.clone(), entry.digest.clone());
            match map.get(&key) {
                Some(existing) if existing != &entry => {
                    return Err(ScriptError::Conflict {
                        template: key.0,
                        digest: key.1,
                    });
                }
                Some(_) => {}
                None => {
                    map.insert(key, entry);
                }
            }
        }
        Ok(Self { entries: map })
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(&line).map_err(|e| ScriptError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push(entry);
        }
        Self::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &ScriptEntry> {
        self.entries.values()
    }
}

/// Write entries as JSON Lines, in the order given.
pub fn write_script<W: Write>(mut out: W, entries: &[ScriptEntry]) -> std::io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let key = (request.template.clone(), request.digest.clone());
        let entry = self.entries.get(&key).ok_or_else(|| GatewayError::ScriptMiss {
            template: request.template.clone(),
            digest: request.digest.clone(),
        })?;
        let prompt_tokens = entry
            .prompt_tokens
            .unwrap_or_else(|| whitespace_tokens(&request.system_text) + whitespace_tokens(&request.user_text));
        let completion_tokens = entry
            .completion_tokens
            .unwrap_or_else(|| whitespace_tokens(&entry.response_text));
        Ok(ChatResponse {
            text: entry.response_text.clone(),
            prompt_tokens,
            completion_tokens,
            estimated: false,
        })
    }
}
