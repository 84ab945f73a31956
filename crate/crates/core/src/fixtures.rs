//! Synthetic multi-hop worlds with matching model scripts.
//!
//! A world is a small set of invented entities, a corpus stating one fact
//! per document, 2- or 3-hop questions over those facts, and a script that
//! answers every call the pipeline will make for each question. Scripts are
//! produced by replaying the pipeline's own binding construction against the
//! final corpus, so a run over the world reproduces the planned answers.

use std::collections::BTreeSet;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{write_jsonl, DatasetRecord};
use crate::decomposer::{ComplexQuestion, SubQuestion};
use crate::fields::format_field;
use crate::gateway::{binding_digest, bindings, template, write_script, Bindings, ScriptEntry};
use crate::keywords::{keyword_bindings, parse_keywords, KeywordSet, KEYWORD_DELIMITER};
use crate::orchestrator::{sub_answer_bindings, synthesis_bindings, PipelineConfig, ANSWER_LABEL};
use crate::retrieval::{select_candidates, write_corpus, CorpusIndex, RawDocument, RetrievalError};
use crate::rewriter::{format_rewrite, rewrite_bindings, QaHistory, INFERENCE_LABEL};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const SCRIPT_FILE: &str = "script.jsonl";
pub const EXPECTED_FILE: &str = "expected.jsonl";

/// Keywords that appear in no document; planted to produce invalid keyword sets.
const NOISE_WORDS: [&str; 4] = ["biography", "timeline", "chronicle", "archive"];
const SYLLABLES: [&str; 20] = [
    "ka", "lo", "mer", "vin", "tra", "sel", "dor", "quin", "bel", "zar", "mo", "ri", "fen", "gal", "tor", "nes", "vra",
    "lum", "pe", "sku",
];
const FIRST_NAMES: [&str; 12] = [
    "Alma", "Bruno", "Celia", "Dario", "Edith", "Felix", "Greta", "Hugo", "Ilse", "Jonas", "Karla", "Linus",
];
const ORG_SUFFIXES: [&str; 5] = ["Labs", "Systems", "Works", "Media", "Foundry"];
const COUNTRIES: [&str; 6] = ["Aldoria", "Brevonia", "Castamir", "Dunmark", "Estavia", "Fennland"];
const MONTHS: [&str; 12] = [
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("hops must be 2 or 3, got {0}")]
    InvalidHops(usize),
    #[error("{what} ({requested}) exceeds question count ({n})")]
    TooMany {
        what: &'static str,
        requested: usize,
        n: usize,
    },
    #[error(transparent)]
    Index(#[from] RetrievalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldOptions {
    pub seed: u64,
    pub n_questions: usize,
    pub hops: usize,
    /// Questions about an organisation whose founding is never stated.
    pub unanswerable: usize,
    /// Answerable questions that lose one gold document from the corpus.
    pub drop_gold: usize,
    /// Probability that a step's keywords carry a word found in no document.
    pub noise: f64,
    pub pipeline: PipelineConfig,
}

impl WorldOptions {
    pub fn new(seed: u64, n_questions: usize, hops: usize) -> Self {
        Self {
            seed,
            n_questions,
            hops,
            unanswerable: 0,
            drop_gold: 0,
            noise: 0.25,
            pipeline: PipelineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedStep {
    pub sub_question: String,
    pub rewritten: String,
    pub keywords: Vec<String>,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_doc: Option<String>,
    /// The planned keywords pass the validity indicator against the gold docs.
    pub indicator: bool,
    /// The step's candidate set contains its gold document.
    pub gold_recalled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedQuestion {
    pub id: String,
    pub answerable: bool,
    pub final_answer: String,
    pub steps: Vec<ExpectedStep>,
    pub gold_dropped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub seed: u64,
    pub hops: usize,
    pub corpus: Vec<RawDocument>,
    pub dataset: Vec<DatasetRecord>,
    pub script: Vec<ScriptEntry>,
    pub expected: Vec<ExpectedQuestion>,
}

#[derive(Debug, Clone)]
pub struct WorldFiles {
    pub corpus: PathBuf,
    pub dataset: PathBuf,
    pub script: PathBuf,
    pub expected: PathBuf,
}

impl SyntheticWorld {
    pub fn write(&self, dir: &Path) -> io::Result<WorldFiles> {
        std::fs::create_dir_all(dir)?;
        let files = WorldFiles {
            corpus: dir.join(CORPUS_FILE),
            dataset: dir.join(DATASET_FILE),
            script: dir.join(SCRIPT_FILE),
            expected: dir.join(EXPECTED_FILE),
        };
        let create = |p: &Path| std::fs::File::create(p).map(io::BufWriter::new);
        write_corpus(create(&files.corpus)?, &self.corpus)?;
        write_jsonl(create(&files.dataset)?, &self.dataset)?;
        write_script(create(&files.script)?, &self.script)?;
        write_jsonl(create(&files.expected)?, &self.expected)?;
        Ok(files)
    }

    /// Fraction of steps whose planned keywords are valid.
    pub fn indicator_count(&self) -> usize {
        self.expected
            .iter()
            .flat_map(|q| &q.steps)
            .filter(|s| s.indicator)
            .count()
    }
}

struct PlannedStep {
    sub_question: String,
    note: String,
    rewritten: String,
    keywords: Vec<String>,
    answer: String,
    gold_doc: Option<String>,
}

struct Plan {
    id: String,
    question: String,
    steps: Vec<PlannedStep>,
    inference: String,
    final_answer: String,
    gold_doc_ids: Vec<String>,
    answerable: bool,
    gold_dropped: bool,
}

struct Builder {
    rng: ChaCha8Rng,
    used: BTreeSet<String>,
    docs: Vec<RawDocument>,
}

impl Builder {
    fn word(&mut self) -> String {
        loop {
            let n = self.rng.random_range(2..=3);
            let mut w: String = (0..n)
                .map(|_| *SYLLABLES.choose(&mut self.rng).expect("syllables"))
                .collect();
            w[..1].make_ascii_uppercase();
            if self.used.insert(w.to_lowercase()) {
                return w;
            }
        }
    }

    fn person(&mut self) -> String {
        let first = FIRST_NAMES.choose(&mut self.rng).expect("names");
        format!("{first} {}", self.word())
    }

    fn date(&mut self) -> String {
        let month = MONTHS.choose(&mut self.rng).expect("months");
        format!(
            "{month} {}, {}",
            self.rng.random_range(1..=28),
            self.rng.random_range(1900..=1999)
        )
    }

    fn country(&mut self) -> String {
        COUNTRIES.choose(&mut self.rng).expect("countries").to_string()
    }

    fn doc(&mut self, title: &str, text: String) -> String {
        let id = format!("d{:04}", self.docs.len() + 1);
        self.docs.push(RawDocument {
            id: id.clone(),
            title: title.to_string(),
            text,
        });
        id
    }

    /// A person sharing the first name of `person`, born on another date.
    fn namesake(&mut self, person: &str) {
        let first = person.split(' ').next().unwrap_or(person);
        let other = format!("{first} {}", self.word());
        let date = self.date();
        self.doc(&other, format!("{other} was born on {date}."));
    }

    /// An organisation sharing the leading word of `org`.
    fn sibling_org(&mut self, org_word: &str, suffix: &str) {
        let other_suffix = ORG_SUFFIXES.iter().find(|s| **s != suffix).expect("suffixes");
        let name = format!("{org_word} {other_suffix}");
        let founder = self.person();
        self.doc(&name, format!("{name} was founded by {founder}."));
    }

    fn org(&mut self) -> (String, String, String) {
        let word = self.word();
        let suffix = ORG_SUFFIXES.choose(&mut self.rng).expect("suffixes").to_string();
        (format!("{word} {suffix}"), word, suffix)
    }

    fn founder_step(&mut self, org: &str, person: &str, gold: String) -> PlannedStep {
        PlannedStep {
            sub_question: format!("Who founded {org}?"),
            note: "None".into(),
            rewritten: format!("Who founded {org}?"),
            keywords: vec![org.to_string()],
            answer: person.to_string(),
            gold_doc: Some(gold),
        }
    }

    fn founder_birth_date(&mut self, id: String) -> Plan {
        let (org, word, suffix) = self.org();
        let person = self.person();
        let date = self.date();
        let d_org = self.doc(&org, format!("{org} was founded by {person}."));
        let d_birth = self.doc(&person, format!("{person} was born on {date}."));
        self.sibling_org(&word, &suffix);
        self.namesake(&person);
        let steps = vec![
            self.founder_step(&org, &person, d_org.clone()),
            PlannedStep {
                sub_question: "When was he born?".into(),
                note: format!("he refers to {person}, the founder of {org}"),
                rewritten: format!("When was {person} born?"),
                keywords: vec![person.clone()],
                answer: date.clone(),
                gold_doc: Some(d_birth.clone()),
            },
        ];
        Plan {
            id,
            question: format!("When was the founder of {org} born?"),
            steps,
            inference: format!("{org} was founded by {person}, who was born on {date}."),
            final_answer: date,
            gold_doc_ids: vec![d_org, d_birth],
            answerable: true,
            gold_dropped: false,
        }
    }

    /// Person's birth city, then the city's country.
    fn birth_country_steps(
        &mut self,
        person: &str,
        subject: &str,
        pronoun_first: bool,
    ) -> (Vec<PlannedStep>, Vec<String>, String, String) {
        let city = self.word();
        let country = self.country();
        let decoy_country = COUNTRIES
            .iter()
            .find(|c| **c != country)
            .expect("countries")
            .to_string();
        let d_city = self.doc(person, format!("{person} was born in {city}."));
        let d_country = self.doc(&city, format!("{city} is a city in {country}."));
        self.doc(
            &format!("{city} River"),
            format!("The {city} River flows through {decoy_country}."),
        );
        let first = if pronoun_first {
            PlannedStep {
                sub_question: "Where was he born?".into(),
                note: format!("he refers to {person}, {subject}"),
                rewritten: format!("Where was {person} born?"),
                keywords: vec![person.to_string()],
                answer: city.clone(),
                gold_doc: Some(d_city.clone()),
            }
        } else {
            PlannedStep {
                sub_question: format!("Where was {person} born?"),
                note: "None".into(),
                rewritten: format!("Where was {person} born?"),
                keywords: vec![person.to_string()],
                answer: city.clone(),
                gold_doc: Some(d_city.clone()),
            }
        };
        let second = PlannedStep {
            sub_question: "In which country is that city?".into(),
            note: format!("that city refers to {city}, where {person} was born"),
            rewritten: format!("In which country is {city}?"),
            keywords: vec![city.clone()],
            answer: country.clone(),
            gold_doc: Some(d_country.clone()),
        };
        (vec![first, second], vec![d_city, d_country], city, country)
    }

    fn person_birth_country(&mut self, id: String) -> Plan {
        let person = self.person();
        self.namesake(&person);
        let (steps, gold, city, country) = self.birth_country_steps(&person, "the person in question", false);
        Plan {
            id,
            question: format!("In which country was {person} born?"),
            steps,
            inference: format!("{person} was born in {city}, which is in {country}."),
            final_answer: country,
            gold_doc_ids: gold,
            answerable: true,
            gold_dropped: false,
        }
    }

    fn founder_birth_country(&mut self, id: String) -> Plan {
        let (org, word, suffix) = self.org();
        let person = self.person();
        let d_org = self.doc(&org, format!("{org} was founded by {person}."));
        self.sibling_org(&word, &suffix);
        let mut steps = vec![self.founder_step(&org, &person, d_org.clone())];
        let (rest, gold, city, country) = self.birth_country_steps(&person, &format!("the founder of {org}"), true);
        steps.extend(rest);
        Plan {
            id,
            question: format!("In which country was the founder of {org} born?"),
            steps,
            inference: format!("{org} was founded by {person}, who was born in {city}, a city in {country}."),
            final_answer: country,
            gold_doc_ids: [vec![d_org], gold].concat(),
            answerable: true,
            gold_dropped: false,
        }
    }

    fn unanswerable(&mut self, id: String, hops: usize, token: &str) -> Plan {
        let (org, word, suffix) = self.org();
        self.sibling_org(&word, &suffix);
        let unknown = |sub: &str, rewritten: String, keywords: Vec<String>| PlannedStep {
            sub_question: sub.to_string(),
            note: if sub.contains(" he ") {
                format!("he refers to the founder of {org}, who is unknown")
            } else {
                "None".into()
            },
            rewritten,
            keywords,
            answer: "unknown".into(),
            gold_doc: None,
        };
        let mut steps = vec![unknown(
            &format!("Who founded {org}?"),
            format!("Who founded {org}?"),
            vec![org.clone()],
        )];
        let question = if hops == 2 {
            steps.push(unknown(
                "When was he born?",
                format!("When was the founder of {org} born?"),
                vec![org.clone()],
            ));
            format!("When was the founder of {org} born?")
        } else {
            steps.push(unknown(
                "Where was he born?",
                format!("Where was the founder of {org} born?"),
                vec![org.clone()],
            ));
            steps.push(unknown(
                "In which country is that city?",
                format!("In which country was the founder of {org} born?"),
                vec![org.clone()],
            ));
            format!("In which country was the founder of {org} born?")
        };
        Plan {
            id,
            question,
            steps,
            inference: format!("No document states who founded {org}."),
            final_answer: token.to_string(),
            gold_doc_ids: Vec::new(),
            answerable: false,
            gold_dropped: false,
        }
    }
}

fn entry(template: &str, b: &Bindings, response: String) -> ScriptEntry {
    ScriptEntry {
        template: template.to_string(),
        digest: binding_digest(b),
        response_text: response,
        prompt_tokens: None,
        completion_tokens: None,
    }
}

/// Generate a world with default options.
pub fn generate_world(seed: u64, n_questions: usize, hops: usize) -> Result<SyntheticWorld, FixtureError> {
    generate(&WorldOptions::new(seed, n_questions, hops))
}

pub fn generate(opts: &WorldOptions) -> Result<SyntheticWorld, FixtureError> {
    if !(2..=3).contains(&opts.hops) {
        return Err(FixtureError::InvalidHops(opts.hops));
    }
    let n = opts.n_questions;
    if opts.unanswerable + opts.drop_gold > n {
        return Err(FixtureError::TooMany {
            what: "unanswerable + drop_gold",
            requested: opts.unanswerable + opts.drop_gold,
            n,
        });
    }
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
        used: BTreeSet::new(),
        docs: Vec::new(),
    };
    for w in NOISE_WORDS {
        b.used.insert(w.to_string());
    }

    let mut kinds: Vec<bool> = (0..n).map(|i| i < opts.unanswerable).collect();
    kinds.shuffle(&mut b.rng);
    let mut plans: Vec<Plan> = kinds
        .iter()
        .enumerate()
        .map(|(i, &unanswerable)| {
            let id = format!("q{:03}", i + 1);
            match (unanswerable, opts.hops) {
                (true, hops) => b.unanswerable(id, hops, &opts.pipeline.unanswerable_token),
                (false, 2) if b.rng.random_bool(0.5) => b.person_birth_country(id),
                (false, 2) => b.founder_birth_date(id),
                (false, _) => b.founder_birth_country(id),
            }
        })
        .collect();

    let answerable: Vec<usize> = (0..n).filter(|&i| plans[i].answerable).collect();
    let dropped: BTreeSet<usize> = answerable
        .choose_multiple(&mut b.rng, opts.drop_gold)
        .copied()
        .collect();
    let mut removed = BTreeSet::new();
    for &i in &dropped {
        plans[i].gold_dropped = true;
        removed.insert(
            plans[i]
                .gold_doc_ids
                .last()
                .expect("answerable plans have gold")
                .clone(),
        );
    }
    let corpus: Vec<RawDocument> = b.docs.iter().filter(|d| !removed.contains(&d.id)).cloned().collect();
    let index = CorpusIndex::build(corpus.clone())?;

    let mut script = Vec::new();
    let mut expected = Vec::new();
    let mut dataset = Vec::new();
    for plan in &mut plans {
        expected.push(replay(plan, &index, opts, &mut b.rng, &mut script));
        dataset.push(DatasetRecord {
            id: plan.id.clone(),
            question: plan.question.clone(),
            answers: vec![plan.final_answer.clone()],
            gold_doc_ids: plan.answerable.then(|| plan.gold_doc_ids.clone()),
            answerable: Some(plan.answerable),
        });
    }
    Ok(SyntheticWorld {
        seed: opts.seed,
        hops: opts.hops,
        corpus,
        dataset,
        script,
        expected,
    })
}

/// Script every call the pipeline makes for `plan`, mirroring its bindings.
fn replay(
    plan: &mut Plan,
    index: &CorpusIndex,
    opts: &WorldOptions,
    rng: &mut ChaCha8Rng,
    script: &mut Vec<ScriptEntry>,
) -> ExpectedQuestion {
    let cfg = &opts.pipeline;
    let q = ComplexQuestion::new(plan.id.clone(), plan.question.clone());
    let numbered: Vec<String> = plan
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s.sub_question))
        .collect();
    script.push(entry(
        template::DECOMPOSE,
        &bindings([("question", q.text.as_str())]),
        numbered.join("\n"),
    ));

    let gold_docs: Vec<_> = plan
        .gold_doc_ids
        .iter()
        .filter_map(|id| index.get(id))
        .map(|d| d.as_ref())
        .collect();
    let mut history = QaHistory::new();
    let mut steps = Vec::new();
    for (i, step) in plan.steps.iter_mut().enumerate() {
        let sub = SubQuestion {
            index: i + 1,
            text: step.sub_question.clone(),
        };
        script.push(entry(
            template::REWRITE,
            &rewrite_bindings(&q, &sub, &history),
            format_rewrite(&step.note, &step.rewritten),
        ));

        let retrieved = index.search(&step.rewritten, cfg.top_n);
        let recall = |keywords: &[String]| {
            let ks = KeywordSet::from_keywords(
                step.rewritten.as_str(),
                parse_keywords(&keywords.join(KEYWORD_DELIMITER)),
            );
            let cands = select_candidates(&retrieved, &ks, cfg.backup_k);
            let hit = step.gold_doc.as_ref().is_some_and(|g| cands.ids().contains(g));
            (ks, cands, hit)
        };
        if rng.random_bool(opts.noise) {
            let mut noisy = step.keywords.clone();
            noisy.push(NOISE_WORDS.choose(rng).expect("noise").to_string());
            // keep the noise only when it does not cost the gold document
            if recall(&noisy).2 || !recall(&step.keywords).2 {
                step.keywords = noisy;
            }
        }
        let (ks, cands, hit) = recall(&step.keywords);
        script.push(entry(
            template::KEYWORDS,
            &keyword_bindings(&step.rewritten),
            step.keywords.join(KEYWORD_DELIMITER),
        ));
        script.push(entry(
            template::SUB_ANSWER,
            &sub_answer_bindings(&step.rewritten, &cands),
            step.answer.clone(),
        ));
        history.push(step.rewritten.clone(), step.answer.clone());
        steps.push(ExpectedStep {
            sub_question: step.sub_question.clone(),
            rewritten: step.rewritten.clone(),
            keywords: ks.keywords.clone(),
            answer: step.answer.clone(),
            gold_doc: step.gold_doc.clone(),
            indicator: crate::keywords::validity_indicator(&ks, &gold_docs),
            gold_recalled: hit,
        });
    }
    let synthesis = format!(
        "{}\n{}",
        format_field(INFERENCE_LABEL, &plan.inference),
        format_field(ANSWER_LABEL, &plan.final_answer)
    );
    script.push(entry(
        template::SYNTHESIZE,
        &synthesis_bindings(&q, &history, &cfg.unanswerable_token),
        synthesis,
    ));
    ExpectedQuestion {
        id: plan.id.clone(),
        answerable: plan.answerable,
        final_answer: plan.final_answer.clone(),
        steps,
        gold_dropped: plan.gold_dropped,
    }
}
