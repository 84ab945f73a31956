//! History-aware rewriting of each sub-question into a self-contained query.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomposer::{ComplexQuestion, SubQuestion};
use crate::fields::{field, format_field};
use crate::gateway::{bindings, template, Bindings, Gateway, GatewayError, Role, UsageLedger};

/// Rendered in place of the history block when no step has completed yet.
pub const EMPTY_HISTORY_MARKER: &str = "None (no previous sub-questions)";

pub const INFERENCE_LABEL: &str = "Inference_process";
pub const MODIFIED_LABEL: &str = "Modified_question";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaEntry {
    pub query: String,
    pub answer: String,
}

/// Rewritten queries and their answers, in chain order. Append-only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaHistory {
    entries: Vec<QaEntry>,
}

impl QaHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, query: impl Into<String>, answer: impl Into<String>) {
        self.entries.push(QaEntry {
            query: query.into(),
            answer: answer.into(),
        });
    }

    pub fn entries(&self) -> &[QaEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `sub_question_k:<query>, sub_answer:<answer>` lines, or the empty marker.
    pub fn render(&self) -> String {
        if self.entries.is_empty() {
            return EMPTY_HISTORY_MARKER.to_string();
        }
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| format!("sub_question_{}:{}, sub_answer:{}", i + 1, e.query, e.answer))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewrittenQuery {
    pub sub_index: usize,
    pub text: String,
    /// The model's stated dependency reasoning; "None" when independent.
    pub inference_note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("model output has no Modified_question field")]
pub struct RewriteParseError;

#[derive(Debug, Error)]
pub enum RewriteError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("rewrite output lacked Modified_question after retry: {raw:?}")]
    Unparsable { raw: String },
}

/// (inference note, modified question). The note is empty when absent.
pub fn parse_rewrite(raw: &str) -> Result<(String, String), RewriteParseError> {
    let modified = field(raw, MODIFIED_LABEL)
        .filter(|m| !m.is_empty())
        .ok_or(RewriteParseError)?;
    let note = field(raw, INFERENCE_LABEL).unwrap_or_default();
    Ok((note, modified))
}

/// Model-output form of a rewrite, the inverse of [`parse_rewrite`].
pub fn format_rewrite(note: &str, modified: &str) -> String {
    format!(
        "{}\n{}",
        format_field(INFERENCE_LABEL, note),
        format_field(MODIFIED_LABEL, modified)
    )
}

pub fn rewrite_bindings(question: &ComplexQuestion, sub: &SubQuestion, history: &QaHistory) -> Bindings {
    bindings([
        ("question", question.text.clone()),
        ("history", history.render()),
        ("sub_question", sub.text.clone()),
    ])
}

pub struct Rewriter<'a> {
    gateway: &'a Gateway,
}

impl<'a> Rewriter<'a> {
    pub fn new(gateway: &'a Gateway) -> Self {
        Self { gateway }
    }

    pub fn rewrite(
        &self,
        question: &ComplexQuestion,
        sub: &SubQuestion,
        history: &QaHistory,
        ledger: &UsageLedger,
    ) -> Result<RewrittenQuery, RewriteError> {
        let b = rewrite_bindings(question, sub, history);
        let mut raw = String::new();
        for _ in 0..2 {
            raw = self
                .gateway
                .call(Role::Main, template::REWRITE, &b, Some(sub.index), ledger)?
                .text;
            if let Ok((inference_note, text)) = parse_rewrite(&raw) {
                return Ok(RewrittenQuery {
                    sub_index: sub.index,
                    text,
                    inference_note,
                });
            }
        }
        Err(RewriteError::Unparsable { raw })
    }
}
