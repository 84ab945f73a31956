//! Discriminative keyword extraction, the keyword validity indicator, and
//! construction of the keyword-extractor instruction-tuning set.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetRecord;
use crate::gateway::{bindings, template, Bindings, Gateway, GatewayError, Role, UsageLedger};
use crate::orchestrator::RunRecord;
use crate::retrieval::{CorpusIndex, Document};
use crate::text::{collapse_whitespace, contains_phrase, terms};

/// Joins keywords in model output and training targets.
pub const KEYWORD_DELIMITER: &str = "; ";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub keywords: Vec<String>,
    pub source_query: String,
    /// Keywords that do not occur in the source query.
    #[serde(default)]
    pub hallucinated: Vec<String>,
    /// Extraction produced nothing usable.
    #[serde(default)]
    pub extraction_failed: bool,
}

impl KeywordSet {
    pub fn empty(query: impl Into<String>) -> Self {
        Self {
            source_query: query.into(),
            ..Self::default()
        }
    }

    /// Normalize, drop empties and case-insensitive duplicates (first wins),
    /// and mark keywords absent from `query`.
    pub fn from_keywords<S: AsRef<str>>(query: impl Into<String>, raw: impl IntoIterator<Item = S>) -> Self {
        let source_query = query.into();
        let query_terms = terms(&source_query);
        let mut seen = HashSet::new();
        let mut keywords = Vec::new();
        let mut hallucinated = Vec::new();
        for k in raw {
            let k = collapse_whitespace(k.as_ref());
            if k.is_empty() || !seen.insert(k.to_lowercase()) {
                continue;
            }
            if !contains_phrase(&query_terms, &terms(&k)) {
                hallucinated.push(k.clone());
            }
            keywords.push(k);
        }
        Self {
            keywords,
            source_query,
            hallucinated,
            extraction_failed: false,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    /// Every keyword phrase-occurs in `stream`. False for an empty set.
    ///
    /// This is the single containment test behind both candidate filtering
    /// and the validity indicator.
    pub fn all_contained_in(&self, stream: &[String]) -> bool {
        !self.keywords.is_empty() && self.keywords.iter().all(|k| contains_phrase(stream, &terms(k)))
    }

    pub fn joined(&self) -> String {
        self.keywords.join(KEYWORD_DELIMITER)
    }
}

/// Split delimiter-separated model output into raw keywords.
pub fn parse_keywords(raw: &str) -> Vec<String> {
    raw.lines()
        .map(|line| {
            let line = line.trim();
            match line.split_once(':') {
                Some((head, rest)) if head.trim().eq_ignore_ascii_case("keywords") => rest,
                _ => line,
            }
        })
        .flat_map(|line| line.split([';', '\n']))
        .map(|k| {
            k.trim()
                .trim_matches(|c: char| matches!(c, '"' | '\'' | '*' | '`' | '-' | '•'))
                .trim()
                .to_string()
        })
        .filter(|k| !k.is_empty())
        .collect()
}

pub fn keyword_bindings(query: &str) -> Bindings {
    bindings([("query", query)])
}

pub struct KeywordExtractor<'a> {
    gateway: &'a Gateway,
}

impl<'a> KeywordExtractor<'a> {
    pub fn new(gateway: &'a Gateway) -> Self {
        Self { gateway }
    }

    /// Empty output is retried once, then yields an empty set marked failed.
    pub fn extract(&self, query: &str, step: Option<usize>, ledger: &UsageLedger) -> Result<KeywordSet, GatewayError> {
        let b = keyword_bindings(query);
        for _ in 0..2 {
            let raw = self
                .gateway
                .call(Role::Keywords, template::KEYWORDS, &b, step, ledger)?
                .text;
            let set = KeywordSet::from_keywords(query, parse_keywords(&raw));
            if !set.is_empty() {
                return Ok(set);
            }
        }
        Ok(KeywordSet {
            extraction_failed: true,
            ..KeywordSet::empty(query)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchRate {
    pub rate: f64,
    pub matched: usize,
    pub total: usize,
    /// No keywords at all; the rate is 1.0 by convention.
    pub vacuous: bool,
}

/// Fraction of keywords that occur as contiguous term runs of their query.
pub fn substring_match_rate<Q: AsRef<str>>(pairs: &[(Q, KeywordSet)]) -> MatchRate {
    let mut matched = 0;
    let mut total = 0;
    for (query, set) in pairs {
        let query_terms = terms(query.as_ref());
        for k in &set.keywords {
            total += 1;
            if contains_phrase(&query_terms, &terms(k)) {
                matched += 1;
            }
        }
    }
    if total == 0 {
        MatchRate {
            rate: 1.0,
            matched,
            total,
            vacuous: true,
        }
    } else {
        MatchRate {
            rate: matched as f64 / total as f64,
            matched,
            total,
            vacuous: false,
        }
    }
}

/// True iff some gold document contains every keyword. Empty set is never valid.
pub fn validity_indicator(keywords: &KeywordSet, gold_docs: &[&Document]) -> bool {
    gold_docs.iter().any(|d| keywords.all_contained_in(&d.terms))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EkTrainingExample {
    pub instruction: String,
    #[serde(rename = "input")]
    pub input_query: String,
    /// Keywords joined by [`KEYWORD_DELIMITER`].
    #[serde(rename = "output")]
    pub output_keywords: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EkBuild {
    pub examples: Vec<EkTrainingExample>,
    /// (query, keywords) pairs examined.
    pub pairs_seen: usize,
    /// Runs skipped because no gold document could be resolved.
    pub skipped_runs: usize,
    /// Gold ids that were not found in the document store.
    pub missing_gold_docs: usize,
}

/// One example per step whose keywords pass the validity indicator against
/// the question's gold documents.
pub fn build_ek_dataset(runs: &[RunRecord], dataset: &[DatasetRecord], store: &CorpusIndex) -> EkBuild {
    let by_id: BTreeMap<&str, &DatasetRecord> = dataset.iter().map(|r| (r.id.as_str(), r)).collect();
    let instruction = template::keyword_instruction();
    let mut build = EkBuild::default();
    for run in runs {
        let gold_ids = by_id.get(run.question.id.as_str()).and_then(|r| r.gold_ids());
        let Some(gold_ids) = gold_ids else {
            build.skipped_runs += 1;
            continue;
        };
        let gold: Vec<&Document> = gold_ids
            .iter()
            .filter_map(|id| {
                let doc = store.get(id).map(|d| d.as_ref());
                if doc.is_none() {
                    build.missing_gold_docs += 1;
                }
                doc
            })
            .collect();
        if gold.is_empty() {
            build.skipped_runs += 1;
            continue;
        }
        for step in &run.steps {
            build.pairs_seen += 1;
            if validity_indicator(&step.keywords, &gold) {
                build.examples.push(EkTrainingExample {
                    instruction: instruction.clone(),
                    input_query: step.rewritten.text.clone(),
                    output_keywords: step.keywords.joined(),
                });
            }
        }
    }
    build
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{binding_digest, GatewaySettings, PromptCatalog, ScriptEntry, ScriptedBackend};
    use crate::retrieval::RawDocument;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn doc(text: &str) -> Document {
        Document::new(RawDocument {
            id: "g".into(),
            title: String::new(),
            text: text.into(),
        })
    }

    fn set(words: &[&str]) -> KeywordSet {
        KeywordSet::from_keywords("q", words.iter().copied())
    }

    fn extractor_gateway(query: &str, reply: &str) -> Gateway {
        let backend = ScriptedBackend::new([ScriptEntry {
            template: "keywords".into(),
            digest: binding_digest(&keyword_bindings(query)),
            response_text: reply.into(),
            prompt_tokens: None,
            completion_tokens: None,
        }])
        .unwrap();
        Gateway::new(Arc::new(backend), PromptCatalog::default(), GatewaySettings::default())
    }

    #[test]
    fn extraction_examples() {
        let q = "When was Craig Newmark born?";
        let gw = extractor_gateway(q, "Craig Newmark");
        let k = KeywordExtractor::new(&gw)
            .extract(q, Some(2), &UsageLedger::new())
            .unwrap();
        assert_eq!(k.keywords, ["Craig Newmark"]);
        assert!(k.hallucinated.is_empty());

        let gw = extractor_gateway("A B", "A; B; A");
        let k = KeywordExtractor::new(&gw)
            .extract("A B", None, &UsageLedger::new())
            .unwrap();
        assert_eq!(k.keywords, ["A", "B"]);

        let ledger = UsageLedger::new();
        let gw = extractor_gateway("x", "");
        let k = KeywordExtractor::new(&gw).extract("x", None, &ledger).unwrap();
        assert!(k.is_empty() && k.extraction_failed);
        assert_eq!(ledger.calls().len(), 2);
    }

    #[test]
    fn parse_and_normalize() {
        assert_eq!(
            parse_keywords("Keywords: Craig  Newmark ; craigslist\n"),
            ["Craig  Newmark", "craigslist"]
        );
        let k = KeywordSet::from_keywords(
            "who founded craigslist",
            parse_keywords(" Craig  Newmark ; craigslist; CRAIGSLIST"),
        );
        assert_eq!(k.keywords, ["Craig Newmark", "craigslist"]);
        assert_eq!(k.hallucinated, ["Craig Newmark"]);
    }

    #[test]
    fn match_rate_examples() {
        let r = substring_match_rate(&[("When was Craig Newmark born?", set(&["Craig Newmark"]))]);
        assert_eq!((r.rate, r.vacuous), (1.0, false));
        let r = substring_match_rate(&[("q one", set(&["q"])), ("q two", set(&["zebra"]))]);
        assert_eq!(r.rate, 0.5);
        let r = substring_match_rate::<&str>(&[]);
        assert_eq!((r.rate, r.vacuous), (1.0, true));
    }

    #[test]
    fn validity_examples() {
        let gold = doc("alpha beta");
        assert!(validity_indicator(&set(&["alpha"]), &[&gold]));
        assert!(!validity_indicator(&set(&["alpha", "gamma"]), &[&gold]));
        assert!(!validity_indicator(&set(&[]), &[&gold]));
        assert!(!validity_indicator(&set(&["alpha"]), &[]));
    }

    /// Oracle: pad both sides with spaces and search the joined strings.
    fn naive_validity(keywords: &[String], docs: &[String]) -> bool {
        if keywords.is_empty() {
            return false;
        }
        docs.iter().any(|d| {
            let hay = format!(" {} ", terms(d).join(" "));
            keywords.iter().all(|k| {
                let needle = terms(k).join(" ");
                !needle.is_empty() && hay.contains(&format!(" {needle} "))
            })
        })
    }

    proptest! {
        #[test]
        fn validity_matches_naive_scan_and_is_monotone(
            keywords in prop::collection::vec("(a|b|c|d)( (a|b|c|d)){0,1}", 0..4),
            extra in "(a|b|c|d|e)",
            docs in prop::collection::vec("((a|b|c|d|e) ){1,8}", 0..4),
        ) {
            let gold: Vec<Document> = docs.iter().map(|d| doc(d)).collect();
            let refs: Vec<&Document> = gold.iter().collect();
            let k = KeywordSet::from_keywords("q", keywords.iter());
            let got = validity_indicator(&k, &refs);
            prop_assert_eq!(got, naive_validity(&k.keywords, &docs));
            let mut bigger = k.keywords.clone();
            bigger.push(extra);
            let bigger = KeywordSet::from_keywords("q", bigger);
            if !got && !k.is_empty() {
                prop_assert!(!validity_indicator(&bigger, &refs));
            }
        }

        #[test]
        fn match_rate_bounded(pairs in prop::collection::vec(("[a-c ]{0,10}", prop::collection::vec("[a-d]{1,2}", 0..3)), 0..5)) {
            let pairs: Vec<(String, KeywordSet)> =
                pairs.into_iter().map(|(q, ks)| (q.clone(), KeywordSet::from_keywords(q, ks))).collect();
            let r = substring_match_rate(&pairs);
            prop_assert!((0.0..=1.0).contains(&r.rate));
        }
    }
}
