//! Question decomposition into an ordered chain of atomic sub-questions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{bindings, template, Gateway, GatewayError, Role, UsageLedger};
use crate::text::collapse_whitespace;

pub const DEFAULT_MAX_CHAIN_LENGTH: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexQuestion {
    pub id: String,
    pub text: String,
}

impl ComplexQuestion {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQuestion {
    /// 1-based position in the chain.
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningChain {
    pub question_id: String,
    pub subs: Vec<SubQuestion>,
}

impl ReasoningChain {
    pub fn len(&self) -> usize {
        self.subs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subs.is_empty()
    }

    /// The chain as a numbered list, the format [`parse_chain`] reads.
    pub fn to_numbered_list(&self) -> String {
        self.subs
            .iter()
            .map(|s| format!("{}. {}", s.index, s.text))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no numbered items in model output")]
pub struct ChainParseError;

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error("question {0} has empty text")]
    EmptyQuestion(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("decomposition output had no numbered items after retry: {raw:?}")]
    Unparsable { raw: String },
}

/// Split `"12. rest"` or `"12) rest"` into (12, "rest").
fn enumerated(line: &str) -> Option<(u64, &str)> {
    let line = line.trim_start();
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    Some((line[..digits].parse().ok()?, rest))
}

/// Numbered items of `raw`, re-indexed 1..n.
///
/// Only lines whose number exceeds the last accepted number are taken, so a
/// restarted or repeated list is ignored. Unnumbered lines are skipped.
pub fn parse_chain(raw: &str) -> Result<Vec<SubQuestion>, ChainParseError> {
    let mut last = 0u64;
    let mut out = Vec::new();
    for line in raw.lines() {
        let Some((k, rest)) = enumerated(line) else { continue };
        if k <= last && !out.is_empty() {
            continue;
        }
        let text = collapse_whitespace(rest);
        if text.is_empty() {
            continue;
        }
        last = k;
        out.push(SubQuestion {
            index: out.len() + 1,
            text,
        });
    }
    if out.is_empty() {
        Err(ChainParseError)
    } else {
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub chain: ReasoningChain,
    /// Items beyond the length cap were dropped.
    pub truncated: bool,
}

pub struct Decomposer<'a> {
    gateway: &'a Gateway,
    max_chain_length: usize,
}

impl<'a> Decomposer<'a> {
    pub fn new(gateway: &'a Gateway, max_chain_length: usize) -> Self {
        Self {
            gateway,
            max_chain_length: max_chain_length.max(1),
        }
    }

    /// One model call (plus one retry on unparsable output).
    pub fn decompose(&self, question: &ComplexQuestion, ledger: &UsageLedger) -> Result<Decomposition, DecomposeError> {
        if question.text.trim().is_empty() {
            return Err(DecomposeError::EmptyQuestion(question.id.clone()));
        }
        let b = bindings([("question", question.text.as_str())]);
        let mut raw = String::new();
        for _ in 0..2 {
            raw = self
                .gateway
                .call(Role::Main, template::DECOMPOSE, &b, None, ledger)?
                .text;
            if let Ok(mut subs) = parse_chain(&raw) {
                let truncated = subs.len() > self.max_chain_length;
                subs.truncate(self.max_chain_length);
                return Ok(Decomposition {
                    chain: ReasoningChain {
                        question_id: question.id.clone(),
                        subs,
                    },
                    truncated,
                });
            }
        }
        Err(DecomposeError::Unparsable { raw })
    }
}
