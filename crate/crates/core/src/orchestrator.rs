//! The per-question loop: decompose, then for every sub-question rewrite,
//! extract keywords, recall candidates and answer; finally synthesize.
//!
//! Every degradation (rewrite fallback, empty keywords, failed sub-answer,
//! truncated chain) is recorded as a [`Flag`] on the [`RunRecord`].

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::DatasetRecord;
use crate::decomposer::{ComplexQuestion, DecomposeError, Decomposer, ReasoningChain, DEFAULT_MAX_CHAIN_LENGTH};
use crate::eval::normalize_answer;
use crate::fields::field;
use crate::gateway::{bindings, template, Bindings, CallTrace, Gateway, GatewayError, Role, UsageLedger};
use crate::keywords::{KeywordExtractor, KeywordSet};
use crate::retrieval::{
    hybrid_recall, EnhancedCandidateSet, RetrievalError, Retriever, DEFAULT_BACKUP_K, DEFAULT_TOP_N,
};
use crate::rewriter::{QaHistory, RewriteError, Rewriter, RewrittenQuery, INFERENCE_LABEL};

pub const RECORD_VERSION: u32 = 1;
/// Recorded as the sub-answer when answering a step fails.
pub const NO_INFORMATION: &str = "no information found";
/// Context passed to the sub-answer prompt when recall found nothing.
pub const NO_DOCUMENTS_CONTEXT: &str = "No relevant documents found.";
pub const DEFAULT_UNANSWERABLE_TOKEN: &str = "unanswerable";
pub const ANSWER_LABEL: &str = "Answer";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub top_n: usize,
    pub backup_k: usize,
    pub max_chain_length: usize,
    pub unanswerable_token: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            top_n: DEFAULT_TOP_N,
            backup_k: DEFAULT_BACKUP_K,
            max_chain_length: DEFAULT_MAX_CHAIN_LENGTH,
            unanswerable_token: DEFAULT_UNANSWERABLE_TOKEN.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Flag {
    ChainTruncated { kept: usize },
    RewriteFallback { step: usize, reason: String },
    EmptyKeywords { step: usize, reason: String },
    SubAnswerFailed { step: usize, reason: String },
    TokensEstimated,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTotals {
    pub prompt: u64,
    pub completion: u64,
}

impl TokenTotals {
    pub fn total(&self) -> u64 {
        self.prompt + self.completion
    }

    fn of<'a>(calls: impl IntoIterator<Item = &'a CallTrace>) -> Self {
        calls.into_iter().fold(Self::default(), |acc, c| Self {
            prompt: acc.prompt + c.prompt_tokens,
            completion: acc.completion + c.completion_tokens,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTrace {
    pub index: usize,
    pub sub_question: String,
    /// Number of QA pairs the rewrite prompt carried.
    pub history_len: usize,
    /// The history block exactly as bound into the rewrite prompt.
    pub history_rendered: String,
    pub rewritten: RewrittenQuery,
    pub keywords: KeywordSet,
    pub candidate_doc_ids: Vec<String>,
    pub keyword_matched_ids: Vec<String>,
    pub backup_ids: Vec<String>,
    pub sub_answer: String,
    pub step_tokens: TokenTotals,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub record_version: u32,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub question: ComplexQuestion,
    pub chain: ReasoningChain,
    pub steps: Vec<StepTrace>,
    pub final_inference: String,
    pub final_answer: String,
    pub predicted_answerable: bool,
    pub sqa_count: usize,
    pub total_tokens: TokenTotals,
    pub tokens_estimated: bool,
    pub flags: Vec<Flag>,
    pub calls: Vec<CallTrace>,
    pub config_digest: String,
    pub wall_time_ms: u64,
}

impl RunRecord {
    fn started(question: &ComplexQuestion, config_digest: &str) -> Self {
        Self {
            record_version: RECORD_VERSION,
            status: RunStatus::Failed,
            error: None,
            question: question.clone(),
            chain: ReasoningChain {
                question_id: question.id.clone(),
                subs: Vec::new(),
            },
            steps: Vec::new(),
            final_inference: String::new(),
            final_answer: String::new(),
            predicted_answerable: false,
            sqa_count: 0,
            total_tokens: TokenTotals::default(),
            tokens_estimated: false,
            flags: Vec::new(),
            calls: Vec::new(),
            config_digest: config_digest.to_string(),
            wall_time_ms: 0,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Complete
    }

    /// Every candidate document id across all steps.
    pub fn retrieved_ids(&self) -> impl Iterator<Item = &str> {
        self.steps
            .iter()
            .flat_map(|s| s.candidate_doc_ids.iter().map(String::as_str))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("decomposition: {0}")]
    Decompose(#[from] DecomposeError),
    #[error("step {step}: retrieval: {source}")]
    Retrieval { step: usize, source: RetrievalError },
    #[error("step {step}: {source}")]
    Step { step: usize, source: GatewayError },
    #[error("synthesis: {0}")]
    Synthesis(#[from] SynthesisError),
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("synthesis output lacked an Answer field after retry: {raw:?}")]
    Unparsable { raw: String },
}

/// A run that aborted; `partial` holds everything recorded up to the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: PipelineError,
    pub partial: RunRecord,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "question {}: {}", self.partial.question.id, self.error)
    }
}

impl std::error::Error for RunFailure {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Synthesis {
    pub inference: String,
    pub answer: String,
    pub answerable: bool,
}

/// Candidate documents as prompt context, in candidate order.
pub fn render_context(candidates: &EnhancedCandidateSet) -> String {
    if candidates.is_empty() {
        return NO_DOCUMENTS_CONTEXT.to_string();
    }
    candidates
        .docs
        .iter()
        .map(|d| {
            if d.doc.title.is_empty() {
                d.doc.text.clone()
            } else {
                format!("{}: {}", d.doc.title, d.doc.text)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn sub_answer_bindings(query: &str, candidates: &EnhancedCandidateSet) -> Bindings {
    bindings([
        ("sub_question", query.to_string()),
        ("rel_text", render_context(candidates)),
    ])
}

pub fn synthesis_bindings(question: &ComplexQuestion, history: &QaHistory, unanswerable_token: &str) -> Bindings {
    bindings([
        ("question", question.text.clone()),
        ("history", history.render()),
        ("unanswerable_token", unanswerable_token.to_string()),
    ])
}

/// The answer string of a sub-answer response: an `Answer:` field when
/// present, otherwise the first non-empty line.
pub fn clean_sub_answer(raw: &str) -> String {
    field(raw, ANSWER_LABEL)
        .filter(|a| !a.is_empty())
        .or_else(|| raw.lines().map(str::trim).find(|l| !l.is_empty()).map(str::to_string))
        .unwrap_or_default()
}

fn digest_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

pub struct Pipeline {
    gateway: Gateway,
    retriever: Arc<dyn Retriever>,
    config: PipelineConfig,
    config_digest: String,
}

impl Pipeline {
    pub fn new(gateway: Gateway, retriever: Arc<dyn Retriever>, config: PipelineConfig) -> Self {
        let config_digest = digest_of(&config);
        Self {
            gateway,
            retriever,
            config,
            config_digest,
        }
    }

    /// Record `digest` as the provenance of every run instead of the pipeline-only digest.
    pub fn with_config_digest(mut self, digest: impl Into<String>) -> Self {
        self.config_digest = digest.into();
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn answer_sub_question(
        &self,
        query: &RewrittenQuery,
        candidates: &EnhancedCandidateSet,
        ledger: &UsageLedger,
    ) -> Result<String, PipelineError> {
        let step = query.sub_index;
        let b = sub_answer_bindings(&query.text, candidates);
        let raw = self
            .gateway
            .call(Role::Main, template::SUB_ANSWER, &b, Some(step), ledger)
            .map_err(|source| PipelineError::Step { step, source })?
            .text;
        Ok(clean_sub_answer(&raw))
    }

    pub fn synthesize_final(
        &self,
        question: &ComplexQuestion,
        history: &QaHistory,
        ledger: &UsageLedger,
    ) -> Result<Synthesis, SynthesisError> {
        let b = synthesis_bindings(question, history, &self.config.unanswerable_token);
        let mut raw = String::new();
        for _ in 0..2 {
            raw = self
                .gateway
                .call(Role::Main, template::SYNTHESIZE, &b, None, ledger)?
                .text;
            if let Some(answer) = field(&raw, ANSWER_LABEL).filter(|a| !a.is_empty()) {
                let inference = field(&raw, INFERENCE_LABEL).unwrap_or_default();
                let answerable = normalize_answer(&answer) != normalize_answer(&self.config.unanswerable_token);
                return Ok(Synthesis {
                    inference,
                    answer,
                    answerable,
                });
            }
        }
        Err(SynthesisError::Unparsable { raw })
    }

    pub fn run(&self, question: &ComplexQuestion) -> Result<RunRecord, Box<RunFailure>> {
        let started = Instant::now();
        let ledger = UsageLedger::new();
        let mut record = RunRecord::started(question, &self.config_digest);
        let outcome = self.execute(question, &ledger, &mut record);
        let calls = ledger.calls();
        record.total_tokens = TokenTotals::of(&calls);
        record.tokens_estimated = ledger.any_estimated();
        if record.tokens_estimated {
            record.flags.push(Flag::TokensEstimated);
        }
        record.calls = calls;
        record.sqa_count = record.steps.len();
        record.wall_time_ms = started.elapsed().as_millis() as u64;
        match outcome {
            Ok(()) => {
                record.status = RunStatus::Complete;
                Ok(record)
            }
            Err(error) => {
                record.status = RunStatus::Failed;
                record.error = Some(error.to_string());
                Err(Box::new(RunFailure { error, partial: record }))
            }
        }
    }

    fn execute(
        &self,
        question: &ComplexQuestion,
        ledger: &UsageLedger,
        record: &mut RunRecord,
    ) -> Result<(), PipelineError> {
        let decomposition = Decomposer::new(&self.gateway, self.config.max_chain_length).decompose(question, ledger)?;
        if decomposition.truncated {
            record.flags.push(Flag::ChainTruncated {
                kept: decomposition.chain.len(),
            });
        }
        record.chain = decomposition.chain;

        let rewriter = Rewriter::new(&self.gateway);
        let extractor = KeywordExtractor::new(&self.gateway);
        let mut history = QaHistory::new();
        for sub in record.chain.subs.clone() {
            let step = sub.index;
            let rewritten = match rewriter.rewrite(question, &sub, &history, ledger) {
                Ok(r) => r,
                Err(e) => {
                    record.flags.push(Flag::RewriteFallback {
                        step,
                        reason: rewrite_reason(&e),
                    });
                    RewrittenQuery {
                        sub_index: step,
                        text: sub.text.clone(),
                        inference_note: String::new(),
                    }
                }
            };
            let keywords = match extractor.extract(&rewritten.text, Some(step), ledger) {
                Ok(k) => {
                    if k.is_empty() {
                        record.flags.push(Flag::EmptyKeywords {
                            step,
                            reason: "empty extraction output".into(),
                        });
                    }
                    k
                }
                Err(e) => {
                    record.flags.push(Flag::EmptyKeywords {
                        step,
                        reason: e.to_string(),
                    });
                    KeywordSet {
                        extraction_failed: true,
                        ..KeywordSet::empty(rewritten.text.clone())
                    }
                }
            };
            let candidates = hybrid_recall(
                self.retriever.as_ref(),
                &rewritten,
                &keywords,
                self.config.top_n,
                self.config.backup_k,
            )
            .map_err(|source| PipelineError::Retrieval { step, source })?;
            let sub_answer = match self.answer_sub_question(&rewritten, &candidates, ledger) {
                Ok(a) if !a.is_empty() => a,
                Ok(_) => {
                    record.flags.push(Flag::SubAnswerFailed {
                        step,
                        reason: "empty answer".into(),
                    });
                    NO_INFORMATION.to_string()
                }
                Err(e) => {
                    record.flags.push(Flag::SubAnswerFailed {
                        step,
                        reason: e.to_string(),
                    });
                    NO_INFORMATION.to_string()
                }
            };
            let step_tokens = TokenTotals::of(ledger.calls().iter().filter(|c| c.step == Some(step)));
            record.steps.push(StepTrace {
                index: step,
                sub_question: sub.text.clone(),
                history_len: history.len(),
                history_rendered: history.render(),
                keyword_matched_ids: candidates.keyword_matched_ids.iter().cloned().collect(),
                backup_ids: candidates.backup_ids.iter().cloned().collect(),
                candidate_doc_ids: candidates.ids(),
                rewritten: rewritten.clone(),
                keywords,
                sub_answer: sub_answer.clone(),
                step_tokens,
            });
            history.push(rewritten.text, sub_answer);
        }

        let synthesis = self.synthesize_final(question, &history, ledger)?;
        record.final_inference = synthesis.inference;
        record.final_answer = synthesis.answer;
        record.predicted_answerable = synthesis.answerable;
        Ok(())
    }

    /// One record per dataset entry, in dataset order. Failed questions yield
    /// their partial record with `status: failed`.
    pub fn run_batch(&self, dataset: &[DatasetRecord], parallelism: usize) -> Vec<RunRecord> {
        let slots: Mutex<Vec<Option<RunRecord>>> = Mutex::new(vec![None; dataset.len()]);
        let next = AtomicUsize::new(0);
        let workers = parallelism.max(1).min(dataset.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(item) = dataset.get(i) else { break };
                    let record = match self.run(&item.question()) {
                        Ok(r) => r,
                        Err(failure) => {
                            log::warn!("{failure}");
                            failure.partial
                        }
                    };
                    slots.lock().expect("batch slots poisoned")[i] = Some(record);
                });
            }
        });
        slots
            .into_inner()
            .expect("batch slots poisoned")
            .into_iter()
            .map(|r| r.expect("every slot filled"))
            .collect()
    }
}

fn rewrite_reason(e: &RewriteError) -> String {
    match e {
        RewriteError::Gateway(g) => g.to_string(),
        RewriteError::Unparsable { .. } => "no Modified_question field".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{binding_digest, GatewaySettings, PromptCatalog, ScriptEntry, ScriptedBackend};
    use crate::keywords::keyword_bindings;
    use crate::retrieval::{select_candidates, CorpusIndex, RawDocument};
    use crate::rewriter::{format_rewrite, rewrite_bindings};

    struct Script(Vec<ScriptEntry>);

    impl Script {
        fn add(&mut self, template: &str, b: &Bindings, text: &str) {
            self.0.push(ScriptEntry {
                template: template.into(),
                digest: binding_digest(b),
                response_text: text.into(),
                prompt_tokens: None,
                completion_tokens: None,
            });
        }
    }

    fn corpus() -> Arc<CorpusIndex> {
        let raw = |id: &str, title: &str, text: &str| RawDocument {
            id: id.into(),
            title: title.into(),
            text: text.into(),
        };
        Arc::new(
            CorpusIndex::build([
                raw("d1", "Craigslist", "Craigslist was founded by Craig Newmark."),
                raw("d2", "Craig Newmark", "Craig Newmark was born on December 6, 1952."),
                raw("d3", "Craig David", "Craig David was born in 1981."),
            ])
            .unwrap(),
        )
    }

    /// Script for the craigslist chain, following the pipeline's own bindings.
    fn craigslist_script(index: &CorpusIndex, config: &PipelineConfig) -> (ComplexQuestion, Vec<ScriptEntry>) {
        let q = ComplexQuestion::new("craig", "When was the founder of craigslist born?");
        let mut s = Script(Vec::new());
        s.add(
            "decompose",
            &bindings([("question", q.text.as_str())]),
            "1. Who was the founder of craigslist?\n2. When was he born?",
        );
        let steps = [
            (
                "Who was the founder of craigslist?",
                "None",
                "Who was the founder of craigslist?",
                "craigslist",
                "Craig Newmark",
            ),
            (
                "When was he born?",
                "he is the founder, Craig Newmark",
                "When was Craig Newmark born?",
                "Craig Newmark",
                "December 6, 1952",
            ),
        ];
        let mut history = QaHistory::new();
        for (i, (sub, note, rewritten, kw, answer)) in steps.iter().enumerate() {
            let sub_q = crate::decomposer::SubQuestion {
                index: i + 1,
                text: sub.to_string(),
            };
            s.add(
                "rewrite",
                &rewrite_bindings(&q, &sub_q, &history),
                &format_rewrite(note, rewritten),
            );
            s.add("keywords", &keyword_bindings(rewritten), kw);
            let ks = KeywordSet::from_keywords(*rewritten, [*kw]);
            let cands = select_candidates(&index.search(rewritten, config.top_n), &ks, config.backup_k);
            s.add("sub_answer", &sub_answer_bindings(rewritten, &cands), answer);
            history.push(*rewritten, *answer);
        }
        s.add(
            "synthesize",
            &synthesis_bindings(&q, &history, &config.unanswerable_token),
            "Inference_process: Craig Newmark founded craigslist and was born on December 6, 1952.\nAnswer: December 6, 1952",
        );
        (q, s.0)
    }

    fn pipeline(entries: Vec<ScriptEntry>, index: Arc<CorpusIndex>) -> Pipeline {
        let gw = Gateway::new(
            Arc::new(ScriptedBackend::new(entries).unwrap()),
            PromptCatalog::default(),
            GatewaySettings::default(),
        );
        Pipeline::new(gw, index, PipelineConfig::default())
    }

    #[test]
    fn craigslist_end_to_end() {
        let index = corpus();
        let (q, script) = craigslist_script(&index, &PipelineConfig::default());
        let p = pipeline(script, index);
        let r = p.run(&q).unwrap();
        assert_eq!(r.final_answer, "December 6, 1952");
        assert!(r.predicted_answerable);
        assert_eq!(r.sqa_count, 2);
        assert!(r.flags.is_empty(), "{:?}", r.flags);
        assert_eq!(r.steps[1].rewritten.text, "When was Craig Newmark born?");
        assert_eq!(r.steps[0].history_len, 0);
        assert_eq!(r.steps[1].history_len, 1);
        assert_eq!(r.steps[1].candidate_doc_ids[0], "d2");
        assert_eq!(r.steps[1].sub_answer, "December 6, 1952");
        // decompose + 2 × (rewrite, keywords, answer) + synthesize
        assert_eq!(r.calls.len(), 8);
        let step_sum: u64 = r.steps.iter().map(|s| s.step_tokens.total()).sum();
        let other: u64 = r
            .calls
            .iter()
            .filter(|c| c.step.is_none())
            .map(|c| c.prompt_tokens + c.completion_tokens)
            .sum();
        assert_eq!(r.total_tokens.total(), step_sum + other);

        let json = serde_json::to_string(&r).unwrap();
        let back: RunRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn rerun_is_identical_except_wall_time() {
        let index = corpus();
        let (q, script) = craigslist_script(&index, &PipelineConfig::default());
        let p = pipeline(script, index);
        let mut a = p.run(&q).unwrap();
        let mut b = p.run(&q).unwrap();
        a.wall_time_ms = 0;
        b.wall_time_ms = 0;
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    }

    #[test]
    fn degradations_are_flagged() {
        let index = corpus();
        let (q, mut script) = craigslist_script(&index, &PipelineConfig::default());
        // drop the second rewrite and the first keyword extraction
        let mut rewrites = 0;
        script.retain(|e| {
            if e.template == "rewrite" {
                rewrites += 1;
                return rewrites != 2;
            }
            !(e.template == "keywords" && e.response_text == "craigslist")
        });
        let r = pipeline(script, index).run(&q);
        // the unrewritten query changes every later binding, so synthesis misses
        let failure = r.unwrap_err();
        let partial = &failure.partial;
        assert!(matches!(failure.error, PipelineError::Synthesis(_)));
        assert_eq!(partial.status, RunStatus::Failed);
        assert_eq!(partial.steps.len(), 2);
        assert!(partial
            .flags
            .iter()
            .any(|f| matches!(f, Flag::EmptyKeywords { step: 1, .. })));
        assert!(partial
            .flags
            .iter()
            .any(|f| matches!(f, Flag::RewriteFallback { step: 2, .. })));
        assert!(partial
            .flags
            .iter()
            .any(|f| matches!(f, Flag::SubAnswerFailed { step: 2, .. })));
        assert_eq!(partial.steps[1].rewritten.text, "When was he born?");
        assert_eq!(partial.steps[1].sub_answer, NO_INFORMATION);
    }

    #[test]
    fn empty_candidates_use_marker_context() {
        let empty = EnhancedCandidateSet::default();
        assert_eq!(render_context(&empty), NO_DOCUMENTS_CONTEXT);
        let q = RewrittenQuery {
            sub_index: 1,
            text: "Who?".into(),
            inference_note: String::new(),
        };
        let mut s = Script(Vec::new());
        s.add(
            "sub_answer",
            &bindings([("sub_question", "Who?"), ("rel_text", NO_DOCUMENTS_CONTEXT)]),
            "nobody\nextra",
        );
        let p = pipeline(s.0, corpus());
        assert_eq!(
            p.answer_sub_question(&q, &empty, &UsageLedger::new()).unwrap(),
            "nobody"
        );
    }

    #[test]
    fn synthesis_parsing_and_unanswerable() {
        let q = ComplexQuestion::new("x", "Which series?");
        let mut h = QaHistory::new();
        h.push("a", "b");
        let b = synthesis_bindings(&q, &h, DEFAULT_UNANSWERABLE_TOKEN);
        let mut s = Script(Vec::new());
        s.add(
            "synthesize",
            &b,
            "Inference_process: matches the description\nAnswer: Animorphs",
        );
        let p = pipeline(s.0, corpus());
        let out = p.synthesize_final(&q, &h, &UsageLedger::new()).unwrap();
        assert_eq!(
            out,
            Synthesis {
                inference: "matches the description".into(),
                answer: "Animorphs".into(),
                answerable: true
            }
        );

        let mut s = Script(Vec::new());
        s.add("synthesize", &b, "Answer: Unanswerable.");
        let out = pipeline(s.0, corpus())
            .synthesize_final(&q, &h, &UsageLedger::new())
            .unwrap();
        assert!(!out.answerable);

        let mut s = Script(Vec::new());
        s.add("synthesize", &b, "I don't know");
        let ledger = UsageLedger::new();
        let err = pipeline(s.0, corpus()).synthesize_final(&q, &h, &ledger).unwrap_err();
        assert!(matches!(err, SynthesisError::Unparsable { .. }));
        assert_eq!(ledger.calls().len(), 2);
    }

    #[test]
    fn single_hop_chain() {
        let index = corpus();
        let q = ComplexQuestion::new("s", "Who founded craigslist?");
        let mut s = Script(Vec::new());
        s.add(
            "decompose",
            &bindings([("question", q.text.as_str())]),
            "1. Who founded craigslist?",
        );
        let sub = crate::decomposer::SubQuestion {
            index: 1,
            text: q.text.clone(),
        };
        s.add(
            "rewrite",
            &rewrite_bindings(&q, &sub, &QaHistory::new()),
            &format_rewrite("None", &q.text),
        );
        s.add("keywords", &keyword_bindings(&q.text), "craigslist");
        let ks = KeywordSet::from_keywords(q.text.as_str(), ["craigslist"]);
        let cands = select_candidates(&index.search(&q.text, 10), &ks, 2);
        s.add("sub_answer", &sub_answer_bindings(&q.text, &cands), "Craig Newmark");
        let mut h = QaHistory::new();
        h.push(q.text.as_str(), "Craig Newmark");
        s.add(
            "synthesize",
            &synthesis_bindings(&q, &h, "unanswerable"),
            "Answer: Craig Newmark",
        );
        let r = pipeline(s.0, index).run(&q).unwrap();
        assert_eq!(r.sqa_count, 1);
        assert_eq!(r.final_answer, "Craig Newmark");
    }

    #[test]
    fn batch_keeps_order_and_isolates_failures() {
        let index = corpus();
        let (q, script) = craigslist_script(&index, &PipelineConfig::default());
        let p = pipeline(script, index);
        let ok = DatasetRecord {
            id: "a".into(),
            question: q.text.clone(),
            answers: vec![],
            gold_doc_ids: None,
            answerable: None,
        };
        let bad = DatasetRecord {
            id: "b".into(),
            question: "unknown question".into(),
            ..ok.clone()
        };
        let ok2 = DatasetRecord {
            id: "c".into(),
            ..ok.clone()
        };
        let out = p.run_batch(&[ok, bad, ok2], 2);
        assert_eq!(
            out.iter().map(|r| r.question.id.as_str()).collect::<Vec<_>>(),
            ["a", "b", "c"]
        );
        assert_eq!(out.iter().filter(|r| r.is_complete()).count(), 2);
        assert!(out[1].error.as_deref().unwrap().contains("decompose"));
        assert!(p.run_batch(&[], 4).is_empty());
    }
}
