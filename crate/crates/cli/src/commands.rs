use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use groundcite::backends::Usage;
use groundcite::config::RunConfig;
use groundcite::datagen::{load_queries, run_pipeline, DatasetMixSpec, RunSummary};
use groundcite::eval::{
    evaluate, parse_jsonl, posthoc_cite_one, read_jsonl, render_table, DatasetStyle, GoldRecord, PredictionRecord,
    RawAnswer,
};
use groundcite::markup::TEMPLATE_VERSION;
use groundcite::retrieval::{load_corpus, write_atomic, Bm25Index, Bm25Params, Corpus, INDEX_FORMAT_VERSION};
use groundcite::tta::{run_tta, TtaError, TtaParams};
use serde::{Deserialize, Serialize};

use crate::GlobalOpts;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    /// Some items failed; the rest were written.
    Partial,
    Usage,
    /// Every failure was a transport failure and nothing succeeded.
    Unreachable,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Success => 0,
            Status::Partial => 1,
            Status::Usage => 2,
            Status::Unreachable => 3,
        }
    }

    fn from_failures(succeeded: usize, failed: usize, all_transport: bool) -> Self {
        match (failed, succeeded) {
            (0, _) => Status::Success,
            (_, 0) if all_transport => Status::Unreachable,
            _ => Status::Partial,
        }
    }
}

fn load_config(g: &GlobalOpts) -> Result<RunConfig> {
    let mut c = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &g.index {
        c.paths.index = Some(p.clone());
    }
    if let Some(p) = &g.corpus {
        c.paths.corpus = Some(p.clone());
    }
    if let Some(p) = &g.script {
        c.generator.kind = groundcite::config::GeneratorKind::Script;
        c.generator.script = Some(p.clone());
    }
    if let Some(p) = &g.overrides {
        c.scorer.kind = groundcite::config::ScorerKind::Oracle;
        c.scorer.overrides = Some(p.clone());
    }
    if let Some(s) = g.seed {
        c.seed = s;
    }
    if let Some(j) = g.jobs {
        c.jobs = j;
    }
    if let Some(k) = g.k {
        c.tta.k = k;
    }
    c.validate()?;
    Ok(c)
}

fn print_summary<T: Serialize>(command: &str, body: &T, config: &RunConfig) -> Result<()> {
    let value = serde_json::json!({
        "command": command,
        "summary": body,
        "config": config,
    });
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_atomic(path, out.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

/// Applies `f` to every item on `jobs` threads, keeping input order.
fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every slot filled")).collect()
}

#[derive(Serialize)]
struct Failure {
    query_id: String,
    error: String,
}

pub fn index(g: &GlobalOpts, force: bool) -> Result<Status> {
    let config = load_config(g)?;
    let corpus_path = config.paths.corpus.as_ref().ok_or_else(|| anyhow!("--corpus is required"))?;
    let index_path = config.paths.index.as_ref().ok_or_else(|| anyhow!("--index is required"))?;
    let corpus = load_corpus(corpus_path)?;
    let index = Bm25Index::build(&corpus, Bm25Params::default());
    index.save(index_path, force)?;
    log::info!("indexed {} passages into {}", corpus.len(), index_path.display());
    print_summary(
        "index",
        &serde_json::json!({
            "passages": corpus.len(),
            "index": index_path,
            "format_version": INDEX_FORMAT_VERSION,
        }),
        &config,
    )?;
    Ok(Status::Success)
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Query files (JSONL of {id, text, dataset_tag}).
    #[arg(long, required = true, num_args = 1..)]
    queries: Vec<PathBuf>,
    /// Training-data output (JSONL). Progress is kept beside it for resuming.
    #[arg(long)]
    output: PathBuf,
    /// Queries drawn per dataset, in order, e.g. `nq=2500,strategyqa=1000,fever=1000`
    /// (the default).
    #[arg(long, value_delimiter = ',')]
    mix: Vec<String>,
    /// Drop queries whose best grounding score is below this.
    #[arg(long)]
    min_g: Option<f64>,
}

fn parse_mix(items: &[String]) -> Result<DatasetMixSpec> {
    if items.is_empty() {
        return Ok(DatasetMixSpec::default());
    }
    let mut counts = Vec::new();
    for item in items {
        let (tag, n) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("mix entry {item:?} is not tag=count"))?;
        let n: usize = n.trim().parse().with_context(|| format!("mix entry {item:?}"))?;
        counts.push((tag.trim().to_string(), n));
    }
    Ok(DatasetMixSpec::new(counts)?)
}

pub fn gen_data(g: &GlobalOpts, args: &GenDataArgs) -> Result<Status> {
    let config = load_config(g)?;
    let mix = parse_mix(&args.mix)?;
    let mut queries = Vec::new();
    for path in &args.queries {
        queries.extend(load_queries(path)?);
    }
    let retriever = config.build_retriever()?;
    let generator = config.build_generator()?;
    let scorer = config.build_scorer()?;
    let mut params = config.datagen_params();
    if let Some(m) = args.min_g {
        params.min_g_filter = m;
    }
    let summary: RunSummary = run_pipeline(
        &mix,
        &queries,
        retriever.as_ref(),
        generator.as_ref(),
        scorer.as_ref(),
        &args.output,
        &params,
        None,
    )?;
    for f in &summary.failures {
        eprintln!("{}", f.error);
    }
    print_summary("gen-data", &summary, &config)?;
    let succeeded = summary.selected - summary.resumed - summary.failed;
    let all_transport = summary.failures.iter().all(|f| f.transport);
    Ok(Status::from_failures(succeeded, summary.failed, all_transport))
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Query file (JSONL of {id, text}).
    #[arg(long)]
    queries: PathBuf,
    /// Prediction output (JSONL), readable by `eval`.
    #[arg(long)]
    output: PathBuf,
    /// Iterate with supplementing retrieval (the default).
    #[arg(long, overrides_with = "no_tta")]
    tta: bool,
    /// Answer with a single grounded-prompt call per query.
    #[arg(long, overrides_with = "tta")]
    no_tta: bool,
    /// Generator calls allowed per query when iterating.
    #[arg(long)]
    budget: Option<usize>,
    /// Directory for one JSON trace per query.
    #[arg(long)]
    traces: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct InferQuery {
    #[serde(alias = "query_id")]
    id: String,
    #[serde(alias = "query")]
    text: String,
}

#[derive(Debug, Serialize)]
struct InferRecord {
    query_id: String,
    answer: String,
    statements: Vec<String>,
    citations: Vec<Vec<String>>,
    unsupported: Vec<String>,
    llm_calls: usize,
    usage: Usage,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace_path: Option<PathBuf>,
}

fn trace_file(dir: &Path, id: &str) -> PathBuf {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    dir.join(format!("{safe}.json"))
}

fn read_lines_as<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_jsonl(&text).with_context(|| path.display().to_string())
}

pub fn infer(g: &GlobalOpts, args: &InferArgs) -> Result<Status> {
    let mut config = load_config(g)?;
    if let Some(b) = args.budget {
        config.tta.budget = b;
    }
    if args.no_tta {
        config.tta.budget = 1;
    }
    config.validate()?;
    let queries: Vec<InferQuery> = read_lines_as(&args.queries)?;
    let mut ids = HashSet::new();
    for q in &queries {
        if !ids.insert(q.id.as_str()) {
            bail!("duplicate query id {:?} in {}", q.id, args.queries.display());
        }
    }
    if let Some(dir) = &args.traces {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let retriever = config.build_retriever()?;
    let generator = config.build_generator()?;
    let params: TtaParams = config.tta_params();

    let results = par_map(&queries, config.jobs, |q| -> Result<InferRecord, (String, bool)> {
        let outcome = run_tta(&q.text, retriever.as_ref(), generator.as_ref(), &params);
        let trace = match &outcome {
            Ok(r) => Some(&r.trace),
            Err(TtaError::Generation { partial, .. }) => Some(partial.as_ref()),
            Err(_) => None,
        };
        let trace_path = match (&args.traces, trace) {
            (Some(dir), Some(t)) => {
                let path = trace_file(dir, &q.id);
                let json = serde_json::to_vec_pretty(t).map_err(|e| (e.to_string(), false))?;
                write_atomic(&path, &json).map_err(|e| (e.to_string(), false))?;
                Some(path)
            }
            _ => None,
        };
        match outcome {
            Ok(r) => Ok(InferRecord {
                query_id: q.id.clone(),
                answer: r.answer.statements.join(" "),
                statements: r.answer.statements,
                citations: r.answer.citations,
                unsupported: r.unsupported,
                llm_calls: r.trace.llm_calls,
                usage: r.trace.usage,
                trace_path,
            }),
            Err(e) => Err((e.to_string(), e.is_transport())),
        }
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut all_transport = true;
    for (q, r) in queries.iter().zip(results) {
        match r {
            Ok(rec) => records.push(rec),
            Err((error, transport)) => {
                eprintln!("query {}: {error}", q.id);
                all_transport &= transport;
                failures.push(Failure {
                    query_id: q.id.clone(),
                    error,
                });
            }
        }
    }
    write_jsonl(&args.output, &records)?;
    let calls: usize = records.iter().map(|r| r.llm_calls).sum();
    print_summary(
        "infer",
        &serde_json::json!({
            "queries": queries.len(),
            "answered": records.len(),
            "failed": failures.len(),
            "llm_calls": calls,
            "tta": !args.no_tta,
            "output": args.output,
            "failures": failures,
        }),
        &config,
    )?;
    Ok(Status::from_failures(records.len(), failures.len(), all_transport))
}

#[derive(Args, Debug)]
pub struct PosthocArgs {
    /// Answers to cite (JSONL of {query_id, answer}).
    #[arg(long)]
    answers: PathBuf,
    /// Prediction output (JSONL), readable by `eval`.
    #[arg(long)]
    output: PathBuf,
}

pub fn posthoc_cite(g: &GlobalOpts, args: &PosthocArgs) -> Result<Status> {
    let config = load_config(g)?;
    let text = std::fs::read_to_string(&args.answers).with_context(|| format!("reading {}", args.answers.display()))?;
    let retriever = config.build_retriever()?;
    let scorer = config.build_scorer()?;
    let thresholds = config.thresholds.grounding();

    let mut answers = Vec::new();
    let mut failures = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawAnswer>(line) {
            Ok(a) => answers.push(a),
            Err(e) => {
                let error = format!("{}: line {}: {e}", args.answers.display(), i + 1);
                eprintln!("{error}");
                failures.push(Failure {
                    query_id: String::new(),
                    error,
                });
            }
        }
    }
    let results = par_map(&answers, config.jobs, |a| {
        posthoc_cite_one(a, retriever.as_ref(), scorer.as_ref(), config.tta.k, thresholds)
    });
    let mut records = Vec::new();
    for (a, r) in answers.iter().zip(results) {
        match r {
            Ok(p) => records.push(p),
            Err(e) => {
                eprintln!("query {}: {e}", a.query_id);
                failures.push(Failure {
                    query_id: a.query_id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    write_jsonl(&args.output, &records)?;
    print_summary(
        "posthoc-cite",
        &serde_json::json!({
            "answers": answers.len(),
            "cited": records.len(),
            "failed": failures.len(),
            "output": args.output,
            "failures": failures,
        }),
        &config,
    )?;
    Ok(Status::from_failures(records.len(), failures.len(), false))
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Prediction file (JSONL).
    #[arg(long)]
    predictions: PathBuf,
    /// Gold file (JSONL); not needed for `citations-only`.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// One of nq, strategyqa, asqa, qampari, citations-only.
    #[arg(long)]
    dataset_style: DatasetStyle,
    /// Also write the full report (JSON) here.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn eval_corpus(config: &RunConfig) -> Result<Corpus> {
    if let Some(p) = &config.paths.corpus {
        return Ok(load_corpus(p)?);
    }
    if let Some(p) = &config.paths.index {
        return Ok(groundcite::Retriever::corpus(&Bm25Index::load(p)?).clone());
    }
    bail!("--corpus or --index is required to resolve citations")
}

pub fn eval(g: &GlobalOpts, args: &EvalArgs) -> Result<Status> {
    let config = load_config(g)?;
    let predictions: Vec<PredictionRecord> = read_jsonl(&args.predictions)?;
    let gold: Vec<GoldRecord> = match (&args.gold, args.dataset_style) {
        (Some(p), _) => read_jsonl(p)?,
        (None, DatasetStyle::CitationsOnly) => Vec::new(),
        (None, _) => bail!("--gold is required for --dataset-style other than citations-only"),
    };
    let corpus = eval_corpus(&config)?;
    let scorer = config.build_scorer()?;
    let report = evaluate(
        &predictions,
        &gold,
        args.dataset_style,
        &corpus,
        scorer.as_ref(),
        config.thresholds.entail,
    );
    print!("{}", render_table(&report));
    let full = serde_json::json!({ "report": report, "config": config });
    if let Some(path) = &args.report {
        write_atomic(path, serde_json::to_string_pretty(&full)?.as_bytes())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!("effective config: {}", serde_json::to_string(&config)?);
    Ok(if report.has_mismatches() {
        Status::Partial
    } else {
        Status::Success
    })
}

pub fn version() {
    println!("groundcite {}", env!("CARGO_PKG_VERSION"));
    println!("index format {INDEX_FORMAT_VERSION}");
    println!("templates {TEMPLATE_VERSION}");
}
