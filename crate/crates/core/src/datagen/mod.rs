//! Construction of citation-annotated tuning data from unlabeled queries.
//!
//! For each query: retrieve a working set of passages, sample several answers
//! from the base model with the zero-shot prompt, attach citations with the
//! entailment scorer, keep the candidate with the highest grounding score, and
//! verbalize it in the grounded-answer format.

mod pipeline;

pub use pipeline::{load_queries, run_pipeline, DatasetCounts, FailureRecord, RunSummary};

use std::cmp::Ordering;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    BackendError, GenerationRequest, Generator, NliScorer, Usage, DATAGEN_SAMPLES, DATAGEN_TEMPERATURE,
    DEFAULT_MAX_TOKENS, DEFAULT_TOP_P,
};
use crate::grounding::{attach_citations, grounding_score, GroundedResponse, GroundingError, Thresholds};
use crate::markup::{
    render_grounded_prompt, render_training_output, render_zero_shot_prompt, sentences, strip_citation_markers,
    MarkupError,
};
use crate::retrieval::{Corpus, Passage, RetrievalError, Retriever};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error(transparent)]
    Markup(#[from] MarkupError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    BadInput { path: PathBuf, line: usize, message: String },
    #[error("query {query_id}: {source}")]
    Query {
        query_id: String,
        #[source]
        source: Box<DatagenError>,
    },
    #[error("no candidate answer has any sentence")]
    NoCandidates,
    #[error("dataset mix: {0}")]
    Mix(String),
}

impl DatagenError {
    pub(crate) fn for_query(self, query_id: &str) -> Self {
        match self {
            e @ DatagenError::Query { .. } => e,
            other => DatagenError::Query {
                query_id: query_id.to_string(),
                source: Box::new(other),
            },
        }
    }

    /// True when the root cause is a backend transport failure.
    pub fn is_transport(&self) -> bool {
        match self {
            DatagenError::Backend(e) => e.is_transport(),
            DatagenError::Grounding(GroundingError::Backend(e)) => e.is_transport(),
            DatagenError::Query { source, .. } => source.is_transport(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlabeledQuery {
    pub id: String,
    pub text: String,
    pub dataset_tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAnswer {
    pub sample_index: usize,
    pub raw_text: String,
    pub grounded: GroundedResponse,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleMetadata {
    pub query_id: String,
    pub dataset_tag: String,
    pub g: f64,
    pub n_unsupported: usize,
    /// Working-set passage ids in prompt order.
    pub passage_ids: Vec<String>,
}

/// One supervised pair, serialized as `{input, output, metadata}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub input: String,
    pub output: String,
    pub metadata: ExampleMetadata,
}

/// Number of queries to draw from each dataset, in drawing order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMixSpec {
    pub counts: Vec<(String, usize)>,
}

impl Default for DatasetMixSpec {
    fn default() -> Self {
        Self {
            counts: vec![
                ("nq".into(), 2500),
                ("strategyqa".into(), 1000),
                ("fever".into(), 1000),
            ],
        }
    }
}

impl DatasetMixSpec {
    pub fn new<S: Into<String>>(counts: impl IntoIterator<Item = (S, usize)>) -> Result<Self, DatagenError> {
        let counts: Vec<(String, usize)> = counts.into_iter().map(|(t, n)| (t.into(), n)).collect();
        for (i, (tag, n)) in counts.iter().enumerate() {
            if *n == 0 {
                return Err(DatagenError::Mix(format!("count for {tag:?} must be positive")));
            }
            if counts[..i].iter().any(|(t, _)| t == tag) {
                return Err(DatagenError::Mix(format!("dataset {tag:?} listed twice")));
            }
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|(_, n)| n).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatagenParams {
    /// Passages presented to the base model.
    pub k: usize,
    pub n_samples: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
    pub thresholds: Thresholds,
    /// Queries whose best candidate scores below this are dropped.
    pub min_g_filter: f64,
    pub seed: Option<u64>,
    pub jobs: usize,
}

impl Default for DatagenParams {
    fn default() -> Self {
        Self {
            k: 5,
            n_samples: DATAGEN_SAMPLES,
            temperature: DATAGEN_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            max_tokens: DEFAULT_MAX_TOKENS,
            thresholds: Thresholds::default(),
            min_g_filter: 0.0,
            seed: None,
            jobs: 1,
        }
    }
}

/// FNV-1a, used to derive a per-query seed that does not depend on run order.
pub(crate) fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3))
}

/// Retrieves the working set and samples raw answers with the zero-shot prompt.
pub fn generate_candidates(
    query: &UnlabeledQuery,
    retriever: &dyn Retriever,
    generator: &dyn Generator,
    params: &DatagenParams,
) -> Result<(Vec<Passage>, Vec<String>, Usage), DatagenError> {
    let inner = || -> Result<_, DatagenError> {
        let hits = retriever.retrieve(&query.text, params.k)?;
        let ids: Vec<&str> = hits.iter().map(|h| h.passage_id.as_str()).collect();
        let working: Vec<Passage> = retriever.corpus().resolve(&ids)?.into_iter().cloned().collect();
        let prompt = render_zero_shot_prompt(&query.text, &working)?;
        let req = GenerationRequest {
            prompt: prompt.text,
            temperature: params.temperature,
            top_p: params.top_p,
            num_samples: params.n_samples,
            max_tokens: params.max_tokens,
            seed: params.seed.map(|s| s ^ stable_hash(&query.id)),
        };
        let result = generator.generate(&req)?;
        Ok((working, result.texts, result.usage))
    };
    inner().map_err(|e| e.for_query(&query.id))
}

/// Segments a sampled answer into statements suitable for verbalization:
/// stray `[n]` markers are removed and non-final statements lacking terminal
/// punctuation get a period so the rendered answer splits the same way.
pub fn statements_of(raw: &str) -> Vec<String> {
    let mut out: Vec<String> = sentences(raw)
        .iter()
        .map(|s| strip_citation_markers(s))
        .filter(|s| !s.is_empty())
        .collect();
    let last = out.len().saturating_sub(1);
    for s in out.iter_mut().take(last) {
        if !s.ends_with(['.', '?', '!']) {
            s.push('.');
        }
    }
    out
}

/// Attaches citations to each sampled text and scores it. Texts with no
/// sentences are skipped.
pub fn ground_candidates(
    raw_texts: &[String],
    working: &[Passage],
    scorer: &dyn NliScorer,
    thresholds: Thresholds,
) -> Result<Vec<CandidateAnswer>, DatagenError> {
    let corpus = Corpus::from_passages(working.to_vec())?;
    let mut out = Vec::with_capacity(raw_texts.len());
    for (sample_index, raw) in raw_texts.iter().enumerate() {
        let statements = statements_of(raw);
        if statements.is_empty() {
            continue;
        }
        let grounded = attach_citations(&statements, working, scorer, thresholds)?;
        let g = grounding_score(&grounded, &corpus, scorer)?.g;
        out.push(CandidateAnswer {
            sample_index,
            raw_text: raw.clone(),
            grounded,
            g,
        });
    }
    Ok(out)
}

/// Orders candidates best-first: higher g, then fewer unsupported statements,
/// then fewer statements, then earlier sample.
pub fn compare_candidates(a: &CandidateAnswer, b: &CandidateAnswer) -> Ordering {
    b.g.total_cmp(&a.g)
        .then_with(|| a.grounded.unsupported.len().cmp(&b.grounded.unsupported.len()))
        .then_with(|| a.grounded.len().cmp(&b.grounded.len()))
        .then_with(|| a.sample_index.cmp(&b.sample_index))
}

pub fn select_best(candidates: &[CandidateAnswer]) -> Result<&CandidateAnswer, DatagenError> {
    candidates
        .iter()
        .min_by(|a, b| compare_candidates(a, b))
        .ok_or(DatagenError::NoCandidates)
}

pub fn emit_training_example(
    query: &UnlabeledQuery,
    best: &CandidateAnswer,
    working: &[Passage],
) -> Result<TrainingExample, DatagenError> {
    let prompt = render_grounded_prompt(&query.text, working)?;
    let output = render_training_output(&best.grounded, &prompt.passage_order)?;
    Ok(TrainingExample {
        input: prompt.text,
        output,
        metadata: ExampleMetadata {
            query_id: query.id.clone(),
            dataset_tag: query.dataset_tag.clone(),
            g: best.g,
            n_unsupported: best.grounded.unsupported.len(),
            passage_ids: prompt.passage_order,
        },
    })
}

/// Result of processing one query end to end.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryOutcome {
    Kept(TrainingExample),
    Filtered { g: f64 },
}

pub fn process_query(
    query: &UnlabeledQuery,
    retriever: &dyn Retriever,
    generator: &dyn Generator,
    scorer: &dyn NliScorer,
    params: &DatagenParams,
) -> Result<QueryOutcome, DatagenError> {
    let (working, texts, _usage) = generate_candidates(query, retriever, generator, params)?;
    let inner = || -> Result<QueryOutcome, DatagenError> {
        let candidates = ground_candidates(&texts, &working, scorer, params.thresholds)?;
        let best = select_best(&candidates)?;
        if best.g < params.min_g_filter {
            return Ok(QueryOutcome::Filtered { g: best.g });
        }
        Ok(QueryOutcome::Kept(emit_training_example(query, best, &working)?))
    };
    inner().map_err(|e| e.for_query(&query.id))
}
