use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use dec_core::config::{AppConfig, ConfigError, SetupError};
use dec_core::dataset::{read_jsonl, write_jsonl, DatasetRecord, JsonlError};
use dec_core::decomposer::ComplexQuestion;
use dec_core::eval::{evaluate, render_table};
use dec_core::fixtures::{generate, WorldOptions};
use dec_core::keywords::build_ek_dataset;
use dec_core::orchestrator::{RunRecord, RunStatus};
use dec_core::retrieval::{read_corpus, CorpusIndex, RetrievalError};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_BACKEND: u8 = 3;

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(m: impl ToString) -> Self {
        Self {
            code: EXIT_USAGE,
            message: m.to_string(),
        }
    }

    fn data(m: impl ToString) -> Self {
        Self {
            code: EXIT_DATA,
            message: m.to_string(),
        }
    }

    fn backend(m: impl ToString) -> Self {
        Self {
            code: EXIT_BACKEND,
            message: m.to_string(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::usage(e)
    }
}

impl From<SetupError> for CliError {
    fn from(e: SetupError) -> Self {
        match e {
            SetupError::Config(_) | SetupError::Prompt(_) => Self::usage(e),
            SetupError::Script(_) | SetupError::Corpus(_) => Self::data(e),
        }
    }
}

impl From<JsonlError> for CliError {
    fn from(e: JsonlError) -> Self {
        Self::data(e)
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        Self::data(e)
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

/// Multi-hop question answering: decompose, rewrite, recall, answer.
#[derive(Parser, Debug)]
#[command(name = "dec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build and persist a lexical index over a corpus file.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer one question and print its run record.
    Run {
        #[command(flatten)]
        setup: Setup,
        /// Question id recorded in the run record.
        #[arg(long, default_value = "q")]
        id: String,
        question: String,
    },
    /// Answer every question of a dataset, resuming from an existing output file.
    Batch {
        #[command(flatten)]
        setup: Setup,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        parallelism: usize,
    },
    /// Emit keyword-extraction training examples from run records.
    BuildEkData {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score run records against a dataset.
    Eval {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Write the JSON report here; the table then goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Score semantic accuracy with the judge model (needs --config).
        #[arg(long)]
        with_judge: bool,
        #[arg(long)]
        with_answerability: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scripted: Option<PathBuf>,
    },
    #[command(hide = true)]
    Fixtures {
        #[command(subcommand)]
        action: FixtureAction,
    },
}

#[derive(Subcommand, Debug)]
enum FixtureAction {
    /// Write a synthetic corpus, dataset, script and config.
    Generate {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        questions: usize,
        #[arg(long, default_value_t = 2)]
        hops: usize,
        #[arg(long, default_value_t = 0)]
        unanswerable: usize,
        #[arg(long, default_value_t = 0)]
        drop_gold: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Configuration file plus command-line overrides.
#[derive(Args, Debug)]
struct Setup {
    #[arg(long)]
    config: PathBuf,
    /// Scripted backend file, replacing the remote model.
    #[arg(long)]
    scripted: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long)]
    backup_k: Option<usize>,
    #[arg(long)]
    max_chain: Option<usize>,
}

impl Setup {
    fn resolve(&self) -> Result<AppConfig> {
        let mut config = AppConfig::load(&self.config)?;
        if let Some(s) = &self.scripted {
            config.scripted = Some(s.clone());
        }
        if let Some(c) = &self.corpus {
            config.retrieval.corpus = Some(c.clone());
            config.retrieval.index_cache = None;
        }
        if let Some(n) = self.top_n {
            config.retrieval.top_n = n;
        }
        if let Some(k) = self.backup_k {
            config.retrieval.backup_k = k;
        }
        if let Some(m) = self.max_chain {
            config.orchestrator.max_chain_length = m;
        }
        config.validate()?;
        Ok(config)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn cmd_index(corpus: &Path, out: &Path) -> Result<()> {
    let docs = read_corpus(corpus)?;
    if docs.is_empty() {
        log::warn!("{} contains no documents", corpus.display());
    }
    let index = CorpusIndex::build(docs)?;
    let mut w = create(out)?;
    index.save(&mut w)?;
    w.flush().map_err(CliError::data)?;
    eprintln!("indexed {} documents into {}", index.len(), out.display());
    Ok(())
}

fn print_trace(r: &RunRecord) {
    eprintln!("question {}: {}", r.question.id, r.question.text);
    for s in &r.chain.subs {
        eprintln!("  {}. {}", s.index, s.text);
    }
    for s in &r.steps {
        eprintln!("step {}", s.index);
        eprintln!("  rewritten: {}", s.rewritten.text);
        eprintln!("  keywords:  {}", s.keywords.joined());
        eprintln!("  documents: {}", s.candidate_doc_ids.join(", "));
        eprintln!("  answer:    {}", s.sub_answer);
    }
    eprintln!("answer: {} (answerable: {})", r.final_answer, r.predicted_answerable);
    for f in &r.flags {
        eprintln!("flag: {}", serde_json::to_string(f).unwrap_or_default());
    }
}

fn cmd_run(setup: &Setup, id: &str, question: &str) -> Result<()> {
    let pipeline = setup.resolve()?.pipeline()?;
    let question = ComplexQuestion::new(id, question);
    let (record, failure) = match pipeline.run(&question) {
        Ok(r) => (r, None),
        Err(f) => (f.partial, Some(f.error)),
    };
    print_trace(&record);
    println!("{}", serde_json::to_string_pretty(&record).expect("record serializes"));
    match failure {
        Some(e) => Err(CliError::backend(e)),
        None => Ok(()),
    }
}

fn cmd_batch(setup: &Setup, dataset_path: &Path, out: &Path, parallelism: usize) -> Result<()> {
    let config = setup.resolve()?;
    let dataset: Vec<DatasetRecord> = read_jsonl(dataset_path)?;
    let digest = config.digest();
    let mut done: BTreeMap<String, RunRecord> = BTreeMap::new();
    if out.exists() {
        for r in read_jsonl::<RunRecord>(out)? {
            if r.status != RunStatus::Complete {
                continue;
            }
            if r.config_digest != digest {
                log::warn!(
                    "re-running `{}`: recorded under a different configuration",
                    r.question.id
                );
                continue;
            }
            done.insert(r.question.id.clone(), r);
        }
    }
    let pending: Vec<DatasetRecord> = dataset.iter().filter(|d| !done.contains_key(&d.id)).cloned().collect();
    let skipped = dataset.len() - pending.len();
    let fresh = if pending.is_empty() {
        Vec::new()
    } else {
        config.pipeline()?.run_batch(&pending, parallelism)
    };
    let failed = fresh.iter().filter(|r| !r.is_complete()).count();
    for r in fresh {
        done.insert(r.question.id.clone(), r);
    }
    let ordered: Vec<RunRecord> = dataset.iter().filter_map(|d| done.remove(&d.id)).collect();

    let tmp = out.with_extension("jsonl.partial");
    let mut w = create(&tmp)?;
    write_jsonl(&mut w, &ordered).map_err(CliError::data)?;
    w.flush().map_err(CliError::data)?;
    drop(w);
    std::fs::rename(&tmp, out).map_err(CliError::data)?;
    eprintln!(
        "{} records written to {} ({} executed, {} reused, {} failed)",
        ordered.len(),
        out.display(),
        pending.len(),
        skipped,
        failed
    );
    if failed > 0 {
        return Err(CliError::backend(format!(
            "{failed} question(s) failed; rerun to retry them"
        )));
    }
    Ok(())
}

fn cmd_build_ek_data(
    runs: &Path,
    dataset: &Path,
    out: &Path,
    corpus: Option<&Path>,
    config: Option<&Path>,
) -> Result<()> {
    let runs: Vec<RunRecord> = read_jsonl(runs)?;
    let dataset: Vec<DatasetRecord> = read_jsonl(dataset)?;
    let store: Arc<CorpusIndex> = match (corpus, config) {
        (Some(c), _) => Arc::new(CorpusIndex::build(read_corpus(c)?)?),
        (None, Some(cfg)) => AppConfig::load(cfg)?.store()?,
        (None, None) => return Err(CliError::usage("build-ek-data needs --corpus or --config")),
    };
    if dataset.iter().all(|d| d.gold_ids().is_none()) {
        log::warn!("dataset carries no gold document ids; no examples can be emitted");
    }
    let build = build_ek_dataset(&runs, &dataset, &store);
    if build.missing_gold_docs > 0 {
        log::warn!(
            "{} gold document ids are absent from the corpus",
            build.missing_gold_docs
        );
    }
    let mut w = create(out)?;
    write_jsonl(&mut w, &build.examples).map_err(CliError::data)?;
    w.flush().map_err(CliError::data)?;
    println!("pairs seen: {}", build.pairs_seen);
    println!("examples emitted: {}", build.examples.len());
    println!("runs skipped: {}", build.skipped_runs);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    runs: &Path,
    dataset: &Path,
    out: Option<&Path>,
    with_judge: bool,
    with_answerability: bool,
    config: Option<&Path>,
    scripted: Option<&Path>,
) -> Result<()> {
    let runs: Vec<RunRecord> = read_jsonl(runs)?;
    let dataset: Vec<DatasetRecord> = read_jsonl(dataset)?;
    let judge = if with_judge {
        let path = config.ok_or_else(|| CliError::usage("--with-judge needs --config"))?;
        let mut cfg = AppConfig::load(path)?;
        if let Some(s) = scripted {
            cfg.scripted = Some(s.to_path_buf());
        }
        Some(cfg.gateway()?)
    } else {
        None
    };
    let report = evaluate(&runs, &dataset, judge.as_ref(), with_answerability).map_err(CliError::data)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    match out {
        Some(path) => {
            let mut w = create(path)?;
            writeln!(w, "{json}").and_then(|_| w.flush()).map_err(CliError::data)?;
            print!("{}", render_table(&report));
        }
        None => {
            eprint!("{}", render_table(&report));
            println!("{json}");
        }
    }
    Ok(())
}

fn cmd_fixtures(opts: &WorldOptions, out: &Path) -> Result<()> {
    let world = generate(opts).map_err(CliError::usage)?;
    world.write(out).map_err(CliError::data)?;
    let config = serde_json::json!({
        "scripted": dec_core::fixtures::SCRIPT_FILE,
        "retrieval": { "corpus": dec_core::fixtures::CORPUS_FILE },
        "orchestrator": {
            "max_chain_length": opts.pipeline.max_chain_length,
            "unanswerable_token": opts.pipeline.unanswerable_token,
        },
    });
    let config_path = out.join("config.json");
    std::fs::write(
        &config_path,
        serde_json::to_string_pretty(&config).expect("json") + "\n",
    )
    .map_err(CliError::data)?;
    eprintln!(
        "{} questions, {} documents, {} script entries in {}",
        world.dataset.len(),
        world.corpus.len(),
        world.script.len(),
        out.display()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Index { corpus, out } => cmd_index(&corpus, &out),
        Command::Run { setup, id, question } => cmd_run(&setup, &id, &question),
        Command::Batch {
            setup,
            dataset,
            out,
            parallelism,
        } => cmd_batch(&setup, &dataset, &out, parallelism),
        Command::BuildEkData {
            runs,
            dataset,
            out,
            corpus,
            config,
        } => cmd_build_ek_data(&runs, &dataset, &out, corpus.as_deref(), config.as_deref()),
        Command::Eval {
            runs,
            dataset,
            out,
            with_judge,
            with_answerability,
            config,
            scripted,
        } => cmd_eval(
            &runs,
            &dataset,
            out.as_deref(),
            with_judge,
            with_answerability,
            config.as_deref(),
            scripted.as_deref(),
        ),
        Command::Fixtures {
            action:
                FixtureAction::Generate {
                    seed,
                    questions,
                    hops,
                    unanswerable,
                    drop_gold,
                    out,
                },
        } => {
            let mut opts = WorldOptions::new(seed, questions, hops);
            opts.unanswerable = unanswerable;
            opts.drop_gold = drop_gold;
            cmd_fixtures(&opts, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
