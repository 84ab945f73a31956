//! Prompt templates with `{name}` placeholders and the built-in catalog.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{Bindings, GatewayError};

pub const DECOMPOSE: &str = "decompose";
pub const REWRITE: &str = "rewrite";
pub const KEYWORDS: &str = "keywords";
pub const SUB_ANSWER: &str = "sub_answer";
pub const SYNTHESIZE: &str = "synthesize";
pub const JUDGE: &str = "judge";

const BUILTIN: [(&str, &str); 6] = [
    (DECOMPOSE, include_str!("../../prompts/decompose.txt")),
    (REWRITE, include_str!("../../prompts/rewrite.txt")),
    (KEYWORDS, include_str!("../../prompts/keywords.txt")),
    (SUB_ANSWER, include_str!("../../prompts/sub_answer.txt")),
    (SYNTHESIZE, include_str!("../../prompts/synthesize.txt")),
    (JUDGE, include_str!("../../prompts/judge.txt")),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
}

/// A piece of a parsed template body.
enum Segment<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn segments(body: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_ident(&after[..close]) => {
                if open > 0 {
                    out.push(Segment::Literal(&rest[..open]));
                }
                out.push(Segment::Slot(&after[..close]));
                rest = &after[close + 1..];
            }
            _ => {
                // a lone brace is literal text
                out.push(Segment::Literal(&rest[..=open]));
                rest = after;
            }
        }
    }
    if !rest.is_empty() {
        out.push(Segment::Literal(rest));
    }
    out
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            body: body.into(),
        }
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        segments(&self.body)
            .into_iter()
            .filter_map(|s| match s {
                Segment::Slot(name) if seen.insert(name) => Some(name.to_string()),
                _ => None,
            })
            .collect()
    }

    /// Substitute every placeholder in a single pass. Bound values are
    /// inserted verbatim and never re-scanned.
    pub fn render(&self, bindings: &Bindings) -> Result<String, GatewayError> {
        let missing: Vec<String> = self
            .placeholders()
            .into_iter()
            .filter(|p| !bindings.contains_key(p))
            .collect();
        if !missing.is_empty() {
            return Err(GatewayError::MissingBinding {
                template: self.name.clone(),
                missing,
            });
        }
        let mut out = String::with_capacity(self.body.len());
        for seg in segments(&self.body) {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Slot(name) => out.push_str(&bindings[name]),
            }
        }
        Ok(out)
    }
}

/// Named templates used by the pipeline and the judge.
#[derive(Debug, Clone)]
pub struct PromptCatalog {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for PromptCatalog {
    fn default() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(name, body)| (name.to_string(), PromptTemplate::new(*name, *body)))
            .collect();
        Self { templates }
    }
}

impl PromptCatalog {
    pub fn get(&self, name: &str) -> Result<&PromptTemplate, GatewayError> {
        self.templates
            .get(name)
            .ok_or_else(|| GatewayError::UnknownTemplate(name.to_string()))
    }

    pub fn set(&mut self, name: &str, body: impl Into<String>) {
        self.templates.insert(name.to_string(), PromptTemplate::new(name, body));
    }

    /// Replace templates with the contents of files, keyed by template name.
    pub fn with_overrides(mut self, overrides: &BTreeMap<String, std::path::PathBuf>) -> std::io::Result<Self> {
        for (name, path) in overrides {
            let body = std::fs::read_to_string(Path::new(path))?;
            self.set(name, body);
        }
        Ok(self)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

/// The instruction part of the keyword template, without the per-query input.
/// This is the `instruction` field of EK training examples.
pub fn keyword_instruction() -> String {
    let body = BUILTIN
        .iter()
        .find(|(name, _)| *name == KEYWORDS)
        .map(|(_, body)| *body)
        .unwrap_or_default();
    body.split("User input:").next().unwrap_or(body).trim().to_string()
}
