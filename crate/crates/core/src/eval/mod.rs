//! Answer-quality, answerability, cost and diagnostic metrics over run records.

mod stopwords;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetRecord;
use crate::decomposer::{ComplexQuestion, ReasoningChain};
use crate::fields::field;
use crate::gateway::{bindings, template, Gateway, Role, UsageLedger};
use crate::orchestrator::RunRecord;
use crate::text::terms;

pub use stopwords::{is_stopword, STOPWORDS};

pub const FIDELITY_THRESHOLD: f64 = 0.8;
pub const CORRECTNESS_LABEL: &str = "Correctness";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("dataset record `{0}` has no answerable flag")]
    MissingAnswerable(String),
    #[error("run for question `{0}` has no dataset record")]
    UnknownQuestion(String),
    #[error("question `{0}` has more than one run record")]
    DuplicateRun(String),
}

/// Lowercase, drop punctuation and the articles a/an/the, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn contains_tokens(pred: &str, gold: &str) -> bool {
    // padded with spaces so containment respects token boundaries
    format!(" {pred} ").contains(&format!(" {gold} "))
}

/// 1 when some normalized gold answer occurs in the normalized prediction.
pub fn cover_em<S: AsRef<str>>(prediction: &str, gold_answers: &[S]) -> u8 {
    let pred = normalize_answer(prediction);
    let hit = gold_answers.iter().any(|g| {
        let gold = normalize_answer(g.as_ref());
        if gold.is_empty() {
            pred.is_empty()
        } else {
            contains_tokens(&pred, &gold)
        }
    });
    u8::from(hit)
}

fn f1_single(pred: &[&str], gold: &[&str]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred.len() as f64;
    let r = overlap as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Lowercased, punctuation-free tokens. Articles are kept: they count
/// toward the token totals of F1.
pub fn f1_tokens(s: &str) -> Vec<String> {
    s.to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Token F1 over multisets of [`f1_tokens`], maximized over gold answers.
pub fn token_f1<S: AsRef<str>>(prediction: &str, gold_answers: &[S]) -> f64 {
    let pred = f1_tokens(prediction);
    let pred: Vec<&str> = pred.iter().map(String::as_str).collect();
    gold_answers
        .iter()
        .map(|g| {
            let gold = f1_tokens(g.as_ref());
            f1_single(&pred, &gold.iter().map(String::as_str).collect::<Vec<_>>())
        })
        .fold(0.0, f64::max)
}

/// `yes`/`no` from a judge response's Correctness field.
pub fn parse_verdict(raw: &str) -> Option<bool> {
    let value = field(raw, CORRECTNESS_LABEL)?;
    let word = value
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_lowercase();
    match word.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeOutcome {
    pub score: u8,
    /// The verdict could not be obtained and `score` is a forced 0.
    pub flagged: bool,
}

/// LLM-judged semantic equivalence of `prediction` to `gold`.
pub fn semantic_acc(
    gateway: &Gateway,
    question: &str,
    gold: &str,
    prediction: &str,
    ledger: &UsageLedger,
) -> JudgeOutcome {
    let b = bindings([("question", question), ("answer", gold), ("prediction", prediction)]);
    for _ in 0..2 {
        match gateway.call(Role::Judge, template::JUDGE, &b, None, ledger) {
            Ok(resp) => {
                if let Some(v) = parse_verdict(&resp.text) {
                    return JudgeOutcome {
                        score: u8::from(v),
                        flagged: false,
                    };
                }
            }
            Err(e) => log::warn!("judge call failed: {e}"),
        }
    }
    JudgeOutcome {
        score: 0,
        flagged: true,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerabilityReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub specificity: f64,
    pub c_acc: f64,
    pub o_acc: f64,
    /// True positives whose answer was judged correct.
    pub tp_correct: usize,
    /// Names of rates whose denominator was zero; they are reported as 0.
    pub undefined: Vec<String>,
}

fn ratio(num: f64, den: f64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num / den
    }
}

/// Confusion metrics with "answerable" as the positive class.
///
/// `correctness[i]` is consulted only for true positives. False positives
/// are truly unanswerable, so none of them enter the `c_acc` denominator.
pub fn answerability_metrics(
    items: &[(&RunRecord, &DatasetRecord)],
    correctness: &[bool],
) -> Result<AnswerabilityReport, EvalError> {
    if items.len() != correctness.len() {
        return Err(EvalError::LengthMismatch {
            left: items.len(),
            right: correctness.len(),
        });
    }
    let (mut tp, mut fp, mut tn, mut fn_, mut tp_correct) = (0, 0, 0, 0, 0);
    for ((run, data), &correct) in items.iter().zip(correctness) {
        let truth = data
            .answerable
            .ok_or_else(|| EvalError::MissingAnswerable(data.id.clone()))?;
        match (run.predicted_answerable, truth) {
            (true, true) => {
                tp += 1;
                tp_correct += usize::from(correct);
            }
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let n = items.len() as f64;
    let mut undefined = Vec::new();
    let accuracy = ratio((tp + tn) as f64, n, "accuracy", &mut undefined);
    let precision = ratio(tp as f64, (tp + fp) as f64, "precision", &mut undefined);
    let recall = ratio(tp as f64, (tp + fn_) as f64, "recall", &mut undefined);
    let f1 = ratio(2.0 * precision * recall, precision + recall, "f1", &mut undefined);
    let specificity = ratio(tn as f64, (tn + fp) as f64, "specificity", &mut undefined);
    let c_acc = ratio(tp_correct as f64, tp as f64, "c_acc", &mut undefined);
    let o_acc = ratio((tn + tp_correct) as f64, n, "o_acc", &mut undefined);
    Ok(AnswerabilityReport {
        tp,
        fp,
        tn,
        fn_,
        accuracy,
        precision,
        recall,
        f1,
        specificity,
        c_acc,
        o_acc,
        tp_correct,
        undefined,
    })
}

/// Tokens per correct answer; `None` when nothing is correct.
pub fn atc_from_totals(total_tokens: u64, correct: u64) -> Option<f64> {
    (correct > 0).then(|| total_tokens as f64 / correct as f64)
}

pub fn atc(records: &[RunRecord], correctness: &[bool]) -> Result<Option<f64>, EvalError> {
    if records.len() != correctness.len() {
        return Err(EvalError::LengthMismatch {
            left: records.len(),
            right: correctness.len(),
        });
    }
    let total: u64 = records.iter().map(|r| r.total_tokens.total()).sum();
    let correct = correctness.iter().filter(|c| **c).count() as u64;
    Ok(atc_from_totals(total, correct))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    pub score: f64,
    pub matched: usize,
    pub total: usize,
    /// No core words in the chain; `score` is 1.0.
    pub vacuous: bool,
}

/// Character-level similarity `1 - levenshtein / max_len`.
pub fn word_similarity(a: &str, b: &str) -> f64 {
    strsim::normalized_levenshtein(a, b)
}

/// Share of the chain's non-stopword tokens that resemble some question word.
pub fn decomposition_fidelity(original: &ComplexQuestion, chain: &ReasoningChain) -> Fidelity {
    let question_words: BTreeSet<String> = terms(&original.text).into_iter().collect();
    let core: Vec<String> = chain
        .subs
        .iter()
        .flat_map(|s| terms(&s.text))
        .filter(|w| !is_stopword(w))
        .collect();
    if core.is_empty() {
        return Fidelity {
            score: 1.0,
            matched: 0,
            total: 0,
            vacuous: true,
        };
    }
    let matched = core
        .iter()
        .filter(|w| {
            question_words
                .iter()
                .any(|q| word_similarity(w, q) > FIDELITY_THRESHOLD)
        })
        .count();
    Fidelity {
        score: matched as f64 / core.len() as f64,
        matched,
        total: core.len(),
        vacuous: false,
    }
}

/// Fraction of positions where two verdict lists agree.
pub fn judge_consistency(a: &[u8], b: &[u8]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Ok(1.0);
    }
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(agree as f64 / a.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRecall {
    pub questions: usize,
    pub gold_docs: usize,
    pub matched_docs: usize,
    pub document_matching_ratio: f64,
    pub fully_recalled: usize,
    pub fully_recalled_ratio: f64,
}

/// Gold documents seen among any step's candidates for one run.
pub fn gold_hits(run: &RunRecord, gold: &[String]) -> usize {
    let seen: BTreeSet<&str> = run.retrieved_ids().collect();
    gold.iter()
        .collect::<BTreeSet<_>>()
        .iter()
        .filter(|g| seen.contains(g.as_str()))
        .count()
}

/// Document- and question-level gold recall; items without gold ids are skipped.
pub fn gold_recall(items: &[(&RunRecord, &DatasetRecord)]) -> Option<GoldRecall> {
    let mut stats = GoldRecall {
        questions: 0,
        gold_docs: 0,
        matched_docs: 0,
        document_matching_ratio: 0.0,
        fully_recalled: 0,
        fully_recalled_ratio: 0.0,
    };
    for (run, data) in items {
        let Some(gold) = data.gold_ids() else { continue };
        let distinct = gold.iter().collect::<BTreeSet<_>>().len();
        let hits = gold_hits(run, gold);
        stats.questions += 1;
        stats.gold_docs += distinct;
        stats.matched_docs += hits;
        stats.fully_recalled += usize::from(hits == distinct);
    }
    if stats.questions == 0 {
        return None;
    }
    stats.document_matching_ratio = stats.matched_docs as f64 / stats.gold_docs as f64;
    stats.fully_recalled_ratio = stats.fully_recalled as f64 / stats.questions as f64;
    Some(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRow {
    pub id: String,
    pub prediction: String,
    pub cover_em: u8,
    pub token_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_semantic: Option<u8>,
    pub judge_flagged: bool,
    pub sqa_count: usize,
    pub total_tokens: u64,
    pub tokens_estimated: bool,
    pub predicted_answerable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answerable: Option<bool>,
    pub fidelity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold_hits: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold_total: Option<usize>,
    pub run_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub cover_em: f64,
    pub token_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_semantic: Option<f64>,
    pub sqa_mean: f64,
    pub total_tokens: u64,
    pub correct: usize,
    /// Absent when no answer is correct.
    pub atc: Option<f64>,
    pub tokens_estimated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answerability: Option<AnswerabilityReport>,
    pub fidelity_mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold_recall: Option<GoldRecall>,
    pub failed_runs: usize,
    pub flags: Vec<String>,
    pub config_digests: Vec<String>,
    pub per_question: Vec<QuestionRow>,
}

/// Pairs runs with their dataset records by question id, in run order.
pub fn join<'a>(
    runs: &'a [RunRecord],
    dataset: &'a [DatasetRecord],
) -> Result<Vec<(&'a RunRecord, &'a DatasetRecord)>, EvalError> {
    let by_id: HashMap<&str, &DatasetRecord> = dataset.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut seen = BTreeSet::new();
    runs.iter()
        .map(|r| {
            let id = r.question.id.as_str();
            if !seen.insert(id) {
                return Err(EvalError::DuplicateRun(id.to_string()));
            }
            by_id
                .get(id)
                .map(|d| (r, *d))
                .ok_or_else(|| EvalError::UnknownQuestion(id.to_string()))
        })
        .collect()
}

pub const JUDGE_PARALLELISM: usize = 4;

/// Judge every item against its first gold answer, `parallelism` items at a time.
pub fn judge_all(gateway: &Gateway, items: &[(&RunRecord, &DatasetRecord)], parallelism: usize) -> Vec<JudgeOutcome> {
    let ledger = UsageLedger::new();
    let next = AtomicUsize::new(0);
    let out = Mutex::new(vec![
        JudgeOutcome {
            score: 0,
            flagged: true
        };
        items.len()
    ]);
    std::thread::scope(|scope| {
        for _ in 0..parallelism.max(1).min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((run, data)) = items.get(i) else { break };
                let gold = data.answers.first().map(String::as_str).unwrap_or_default();
                let verdict = semantic_acc(gateway, &data.question, gold, &run.final_answer, &ledger);
                out.lock().expect("verdicts poisoned")[i] = verdict;
            });
        }
    });
    out.into_inner().expect("verdicts poisoned")
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

/// Full report. Correctness for ATC and answerability is the judge verdict
/// when a judge is given, CoverEM otherwise.
pub fn evaluate(
    runs: &[RunRecord],
    dataset: &[DatasetRecord],
    judge: Option<&Gateway>,
    with_answerability: bool,
) -> Result<MetricReport, EvalError> {
    let items = join(runs, dataset)?;
    let verdicts = judge.map(|gw| judge_all(gw, &items, JUDGE_PARALLELISM));
    let mut flags = Vec::new();
    let rows: Vec<QuestionRow> = items
        .iter()
        .enumerate()
        .map(|(i, (run, data))| {
            let pred = &run.final_answer;
            let judged = verdicts.as_ref().map(|v| v[i]);
            let gold = data.gold_ids();
            QuestionRow {
                id: data.id.clone(),
                prediction: pred.clone(),
                cover_em: cover_em(pred, &data.answers),
                token_f1: token_f1(pred, &data.answers),
                acc_semantic: judged.map(|j| j.score),
                judge_flagged: judged.is_some_and(|j| j.flagged),
                sqa_count: run.sqa_count,
                total_tokens: run.total_tokens.total(),
                tokens_estimated: run.tokens_estimated,
                predicted_answerable: run.predicted_answerable,
                answerable: data.answerable,
                fidelity: decomposition_fidelity(&run.question, &run.chain).score,
                gold_hits: gold.map(|g| gold_hits(run, g)),
                gold_total: gold.map(|g| g.iter().collect::<BTreeSet<_>>().len()),
                run_failed: !run.is_complete(),
            }
        })
        .collect();

    let correctness: Vec<bool> = rows.iter().map(|r| r.acc_semantic.unwrap_or(r.cover_em) == 1).collect();
    let judge_flags = rows.iter().filter(|r| r.judge_flagged).count();
    if judge_flags > 0 {
        flags.push(format!("judge_unparsable:{judge_flags}"));
    }
    let run_refs: Vec<RunRecord> = items.iter().map(|(r, _)| (*r).clone()).collect();
    let atc = atc(&run_refs, &correctness)?;
    if atc.is_none() {
        flags.push("atc_undefined".to_string());
    }
    let answerability = if with_answerability {
        Some(answerability_metrics(&items, &correctness)?)
    } else {
        None
    };
    if let Some(a) = &answerability {
        flags.extend(a.undefined.iter().map(|u| format!("undefined:{u}")));
    }
    let tokens_estimated = rows.iter().any(|r| r.tokens_estimated);
    if tokens_estimated {
        flags.push("tokens_estimated".to_string());
    }
    let config_digests: Vec<String> = runs
        .iter()
        .map(|r| r.config_digest.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    Ok(MetricReport {
        n: rows.len(),
        cover_em: mean(rows.iter().map(|r| f64::from(r.cover_em))),
        token_f1: mean(rows.iter().map(|r| r.token_f1)),
        acc_semantic: judge.map(|_| mean(rows.iter().map(|r| f64::from(r.acc_semantic.unwrap_or(0))))),
        sqa_mean: mean(rows.iter().map(|r| r.sqa_count as f64)),
        total_tokens: rows.iter().map(|r| r.total_tokens).sum(),
        correct: correctness.iter().filter(|c| **c).count(),
        atc,
        tokens_estimated,
        answerability,
        fidelity_mean: mean(rows.iter().map(|r| r.fidelity)),
        gold_recall: gold_recall(&items),
        failed_runs: rows.iter().filter(|r| r.run_failed).count(),
        flags,
        config_digests,
        per_question: rows,
    })
}

/// Plain-text summary of a report.
pub fn render_table(report: &MetricReport) -> String {
    let mut rows: BTreeMap<usize, (String, String)> = BTreeMap::new();
    let mut add = |name: &str, value: String| {
        let k = rows.len();
        rows.insert(k, (name.to_string(), value));
    };
    let pct = |v: f64| format!("{:.2}", v * 100.0);
    add("questions", report.n.to_string());
    add("CoverEM", pct(report.cover_em));
    add("F1", pct(report.token_f1));
    if let Some(acc) = report.acc_semantic {
        add("Acc (judge)", pct(acc));
    }
    add("#SQA", format!("{:.2}", report.sqa_mean));
    add("tokens", report.total_tokens.to_string());
    add(
        "ATC",
        report.atc.map_or_else(|| "n/a".to_string(), |a| format!("{a:.2}")),
    );
    add("fidelity", pct(report.fidelity_mean));
    if let Some(g) = &report.gold_recall {
        add(
            "doc matching",
            format!(
                "{} ({}/{})",
                pct(g.document_matching_ratio),
                g.matched_docs,
                g.gold_docs
            ),
        );
        add(
            "fully recalled",
            format!("{} ({}/{})", pct(g.fully_recalled_ratio), g.fully_recalled, g.questions),
        );
    }
    if let Some(a) = &report.answerability {
        add("TP/FP/TN/FN", format!("{}/{}/{}/{}", a.tp, a.fp, a.tn, a.fn_));
        add("accuracy", pct(a.accuracy));
        add("precision", pct(a.precision));
        add("recall", pct(a.recall));
        add("F1 (answerable)", pct(a.f1));
        add("specificity", pct(a.specificity));
        add("C Acc", pct(a.c_acc));
        add("O Acc", pct(a.o_acc));
    }
    if report.failed_runs > 0 {
        add("failed runs", report.failed_runs.to_string());
    }
    if !report.flags.is_empty() {
        add("flags", report.flags.join(", "));
    }
    let width = rows.values().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (name, value) in rows.values() {
        let _ = writeln!(out, "{name:<width$}  {value}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposer::SubQuestion;
    use crate::gateway::{binding_digest, GatewaySettings, PromptCatalog, ScriptEntry, ScriptedBackend};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn judge_gateway(replies: &[(&str, &str, &str, &str)]) -> Gateway {
        let entries = replies.iter().map(|(q, a, p, reply)| ScriptEntry {
            template: template::JUDGE.into(),
            digest: binding_digest(&bindings([("question", *q), ("answer", *a), ("prediction", *p)])),
            response_text: reply.to_string(),
            prompt_tokens: None,
            completion_tokens: None,
        });
        Gateway::new(
            Arc::new(ScriptedBackend::new(entries).unwrap()),
            PromptCatalog::default(),
            GatewaySettings::default(),
        )
    }

    #[test]
    fn judge_verdicts_and_failures() {
        let q1 = "Which region is the capital of Italy, Rome, located in?";
        let q2 = "What is the name of the dessert?";
        let gw = judge_gateway(&[
            (q1, "the Lazio region", "the answer is Lazio", "-Correctness: yes"),
            (q2, "Apple-Kneel", "flaming volcano", "-Correctness: no"),
            (q2, "Apple-Kneel", "who knows", "-Correctness: maybe"),
        ]);
        let ledger = UsageLedger::new();
        assert_eq!(
            semantic_acc(&gw, q1, "the Lazio region", "the answer is Lazio", &ledger),
            JudgeOutcome {
                score: 1,
                flagged: false
            }
        );
        assert_eq!(
            semantic_acc(&gw, q2, "Apple-Kneel", "flaming volcano", &ledger),
            JudgeOutcome {
                score: 0,
                flagged: false
            }
        );
        let before = ledger.calls().len();
        assert_eq!(
            semantic_acc(&gw, q2, "Apple-Kneel", "who knows", &ledger),
            JudgeOutcome {
                score: 0,
                flagged: true
            }
        );
        assert_eq!(ledger.calls().len(), before + 2);
        // a missing script entry is also a flagged zero
        assert!(semantic_acc(&gw, q2, "Apple-Kneel", "unscripted", &ledger).flagged);
    }

    #[test]
    fn degenerate_answerability() {
        let run = |id: &str, pred: bool| {
            let mut r: RunRecord = serde_json::from_value(serde_json::json!({
                "record_version": 1, "status": "complete", "question": {"id": id, "text": "q"},
                "chain": {"question_id": id, "subs": []}, "steps": [], "final_inference": "", "final_answer": "",
                "predicted_answerable": false, "sqa_count": 0, "total_tokens": {"prompt": 0, "completion": 0},
                "tokens_estimated": false, "flags": [], "calls": [], "config_digest": "", "wall_time_ms": 0
            }))
            .unwrap();
            r.predicted_answerable = pred;
            r
        };
        let data = |id: &str, truth: Option<bool>| DatasetRecord {
            id: id.into(),
            question: "q".into(),
            answers: vec!["a".into()],
            gold_doc_ids: None,
            answerable: truth,
        };
        let runs = [run("a", false), run("b", false)];
        let ds = [data("a", Some(false)), data("b", Some(false))];
        let items: Vec<_> = runs.iter().zip(&ds).collect();
        let r = answerability_metrics(&items, &[false, false]).unwrap();
        assert_eq!((r.tn, r.o_acc, r.recall), (2, 1.0, 0.0));
        assert!(r.undefined.contains(&"recall".to_string()));

        let runs = [run("a", true)];
        let ds = [data("a", Some(true))];
        let items: Vec<_> = runs.iter().zip(&ds).collect();
        let r = answerability_metrics(&items, &[true]).unwrap();
        for v in [r.accuracy, r.precision, r.recall, r.f1, r.c_acc, r.o_acc] {
            assert_eq!(v, 1.0);
        }

        let ds = [data("a", None)];
        let items: Vec<_> = runs.iter().zip(&ds).collect();
        assert_eq!(
            answerability_metrics(&items, &[true]),
            Err(EvalError::MissingAnswerable("a".into()))
        );
    }

    proptest! {
        #[test]
        fn cover_em_reflexive(a in "[A-Za-z]{1,8}( [A-Za-z,.]{1,8}){0,4}") {
            prop_assume!(!normalize_answer(&a).is_empty());
            prop_assert_eq!(cover_em(&a, &[&a]), 1);
            prop_assert!(token_f1(&a, &[&a]) > 0.0);
        }

        #[test]
        fn answerability_counts_are_consistent(labels in prop::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 1..40)) {
            let runs: Vec<RunRecord> = labels.iter().enumerate().map(|(i, l)| {
                let mut r: RunRecord = serde_json::from_value(serde_json::json!({
                    "record_version": 1, "status": "complete", "question": {"id": i.to_string(), "text": "q"},
                    "chain": {"question_id": "x", "subs": []}, "steps": [], "final_inference": "", "final_answer": "",
                    "predicted_answerable": false, "sqa_count": 0, "total_tokens": {"prompt": 0, "completion": 0},
                    "tokens_estimated": false, "flags": [], "calls": [], "config_digest": "", "wall_time_ms": 0
                })).unwrap();
                r.predicted_answerable = l.0;
                r
            }).collect();
            let ds: Vec<DatasetRecord> = labels.iter().enumerate().map(|(i, l)| DatasetRecord {
                id: i.to_string(), question: "q".into(), answers: vec![], gold_doc_ids: None, answerable: Some(l.1),
            }).collect();
            let items: Vec<_> = runs.iter().zip(&ds).collect();
            let correct: Vec<bool> = labels.iter().map(|l| l.2).collect();
            let r = answerability_metrics(&items, &correct).unwrap();
            prop_assert_eq!(r.tp + r.fp + r.tn + r.fn_, labels.len());
            if r.tn + r.fp > 0 {
                prop_assert!((r.specificity - r.tn as f64 / (r.tn + r.fp) as f64).abs() < 1e-12);
            }
            for v in [r.accuracy, r.precision, r.recall, r.f1, r.specificity, r.c_acc, r.o_acc] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn atc_times_correct_is_total(total in 0u64..10_000_000, correct in 1u64..1000) {
            let atc = atc_from_totals(total, correct).unwrap();
            prop_assert!((atc * correct as f64 - total as f64).abs() <= 1e-6 * total.max(1) as f64);
        }
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("The  Lazio, region!"), "lazio region");
        assert_eq!(normalize_answer("An apple a day"), "apple day");
    }

    #[test]
    fn cover_em_cases() {
        assert_eq!(cover_em("the answer is Lazio", &["Lazio"]), 1);
        assert_eq!(cover_em("the answer is Lazio", &["the Lazio region"]), 0);
        assert_eq!(cover_em("Lazio", &["Lazio"]), 1);
        assert_eq!(cover_em("Lazioland", &["Lazio"]), 0);
        assert_eq!(cover_em("x", &[] as &[&str]), 0);
        assert_eq!(cover_em("the", &["a"]), 1);
    }

    #[test]
    fn f1_cases() {
        assert!((token_f1("the lazio region", &["lazio"]) - 0.5).abs() < 1e-12);
        assert_eq!(token_f1("lazio", &["lazio"]), 1.0);
        assert_eq!(token_f1("rome", &["lazio"]), 0.0);
        assert_eq!(token_f1("The Lazio", &["the lazio."]), 1.0);
        assert_eq!(token_f1("the", &["an"]), 0.0);
        assert_eq!(token_f1("", &["..."]), 1.0);
        assert_eq!(token_f1("lazio", &["rome", "lazio"]), 1.0);
    }

    #[test]
    fn verdicts() {
        assert_eq!(parse_verdict("-Correctness: yes"), Some(true));
        assert_eq!(parse_verdict("Correctness: No."), Some(false));
        assert_eq!(parse_verdict("**Correctness**: YES"), Some(true));
        assert_eq!(parse_verdict("Correctness: maybe"), None);
        assert_eq!(parse_verdict("yes"), None);
    }

    #[test]
    fn atc_arithmetic() {
        assert_eq!(atc_from_totals(1000, 1), Some(1000.0));
        assert_eq!(atc_from_totals(1000, 0), None);
    }

    fn chain(texts: &[&str]) -> ReasoningChain {
        ReasoningChain {
            question_id: "q".into(),
            subs: texts
                .iter()
                .enumerate()
                .map(|(i, t)| SubQuestion {
                    index: i + 1,
                    text: t.to_string(),
                })
                .collect(),
        }
    }

    #[test]
    fn fidelity_cases() {
        let q = ComplexQuestion::new("q", "When was the founder of craigslist born?");
        assert!((word_similarity("founder", "founded") - 6.0 / 7.0).abs() < 1e-12);
        let f = decomposition_fidelity(&q, &chain(&["Who founded craigslist?"]));
        assert_eq!((f.matched, f.total, f.score), (2, 2, 1.0));
        let f = decomposition_fidelity(&q, &chain(&["Was the founder of craigslist born in Paris?"]));
        assert_eq!((f.matched, f.total), (3, 4));
        let f = decomposition_fidelity(&q, &chain(&["Who was it?"]));
        assert!(f.vacuous);
        assert_eq!(f.score, 1.0);
    }

    #[test]
    fn consistency() {
        assert_eq!(judge_consistency(&[1, 0, 1], &[1, 0, 1]), Ok(1.0));
        assert_eq!(judge_consistency(&[1, 0], &[0, 1]), Ok(0.0));
        let a = [1u8; 10];
        let mut b = a;
        b[4] = 0;
        assert_eq!(judge_consistency(&a, &b), Ok(0.9));
        assert!(judge_consistency(&[1], &[]).is_err());
    }
}
