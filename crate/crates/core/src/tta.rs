//! Budgeted iterative inference with self-reported citation gaps.
//!
//! Each iteration regenerates the answer from scratch over the current working
//! passages. Cited passages are kept as relevant; the next working set is the
//! relevant passages followed by new passages retrieved for the statements the
//! model marked unsupported (or for the query when none were marked), skipping
//! any passage already shown. The loop ends when the budget of generator calls
//! is spent or the working set stops changing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    BackendError, GenerationRequest, Generator, Usage, DEFAULT_MAX_TOKENS, DEFAULT_TOP_P, EVAL_TEMPERATURE,
};
use crate::grounding::GroundedResponse;
use crate::markup::{parse_marked_response, render_grounded_prompt, MarkupError, ParseWarning};
use crate::retrieval::{Passage, RetrievalError, Retriever};

#[derive(Debug, Error)]
pub enum TtaError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Markup(#[from] MarkupError),
    #[error("generation failed at iteration {iteration}: {source}")]
    Generation {
        iteration: usize,
        #[source]
        source: BackendError,
        partial: Box<TtaTrace>,
    },
}

impl TtaError {
    pub fn is_transport(&self) -> bool {
        matches!(self, TtaError::Generation { source, .. } if source.is_transport())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtaParams {
    /// Passages the model can take per call.
    pub k: usize,
    /// Maximum generator calls.
    pub budget: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
    pub seed: Option<u64>,
    /// Hits requested per supplementing retrieval, as a multiple of `k`.
    pub supplement_depth: usize,
}

impl Default for TtaParams {
    fn default() -> Self {
        Self {
            k: 5,
            budget: 4,
            temperature: EVAL_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: None,
            supplement_depth: 2,
        }
    }
}

/// Passage bookkeeping between iterations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TtaState {
    pub working: Vec<String>,
    pub seen: Vec<String>,
    pub relevant: Vec<String>,
    pub iteration: usize,
    pub budget_remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplementRetrieval {
    pub query: String,
    pub hits: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub working: Vec<String>,
    /// One entry per generator call made in this iteration.
    pub raw_outputs: Vec<String>,
    /// The output could not be parsed even after a retry; the raw text was
    /// used as a single uncited, unsupported statement.
    pub fallback: bool,
    pub warnings: Vec<ParseWarning>,
    pub statements: Vec<String>,
    pub citations: Vec<Vec<String>>,
    pub cited: Vec<String>,
    pub unsupported: Vec<String>,
    pub relevant: Vec<String>,
    pub seen: Vec<String>,
    pub supplements: Vec<SupplementRetrieval>,
    pub next_working: Option<Vec<String>>,
    pub usage: Usage,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TtaTrace {
    pub query: String,
    pub budget: usize,
    pub initial_working: Vec<String>,
    pub iterations: Vec<IterationRecord>,
    pub llm_calls: usize,
    pub budget_unused: usize,
    /// Why the loop ended before the budget ran out, if it did.
    pub early_stop: Option<String>,
    pub relevant: Vec<String>,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtaResult {
    pub answer: GroundedResponse,
    /// Passages cited by the final answer.
    pub cited_passages: Vec<String>,
    /// Unsupported statements reported with the final answer, verbatim.
    pub unsupported: Vec<String>,
    pub trace: TtaTrace,
}

/// Keeps the first occurrence of each id.
pub fn dedup(ids: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(ids.len());
    for id in ids {
        if !out.contains(id) {
            out.push(id.clone());
        }
    }
    out
}

/// Elements of `ids` not in `exclude`, order preserved.
pub fn set_diff(ids: &[String], exclude: &[String]) -> Vec<String> {
    ids.iter().filter(|id| !exclude.contains(id)).cloned().collect()
}

/// Interleaves ranked lists by rank (all first hits, then all second hits, ...),
/// dropping repeats.
fn round_robin(lists: &[Vec<String>]) -> Vec<String> {
    let depth = lists.iter().map(Vec::len).max().unwrap_or(0);
    let mut merged = Vec::new();
    for rank in 0..depth {
        for list in lists {
            if let Some(id) = list.get(rank) {
                merged.push(id.clone());
            }
        }
    }
    dedup(&merged)
}

struct Parsed {
    statements: Vec<String>,
    citations: Vec<Vec<String>>,
    unsupported: Vec<String>,
    warnings: Vec<ParseWarning>,
}

fn try_parse(raw: &str, working: &[String]) -> Option<Parsed> {
    let parsed = parse_marked_response(raw, working.len());
    if !parsed.has_answer_header || parsed.response.sentences.is_empty() {
        return None;
    }
    let citations = parsed
        .response
        .sentences
        .iter()
        .map(|s| s.citations.iter().map(|&n| working[n - 1].clone()).collect())
        .collect();
    Some(Parsed {
        statements: parsed.response.sentences.iter().map(|s| s.text.clone()).collect(),
        citations,
        unsupported: parsed.response.unsupported,
        warnings: parsed.warnings,
    })
}

fn fallback(raw: &str) -> Parsed {
    let text = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    let (statements, unsupported) = if text.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        (vec![text.clone()], vec![text])
    };
    Parsed {
        citations: vec![Vec::new(); statements.len()],
        statements,
        unsupported,
        warnings: Vec::new(),
    }
}

fn to_grounded(p: &Parsed) -> GroundedResponse {
    let unsupported = p
        .statements
        .iter()
        .enumerate()
        .filter(|(i, s)| p.citations[*i].is_empty() && p.unsupported.contains(s))
        .map(|(i, _)| i)
        .collect();
    GroundedResponse {
        statements: p.statements.clone(),
        citations: p.citations.clone(),
        unsupported,
        per_statement_score: None,
    }
}

/// Runs the iterative loop for one query.
pub fn run_tta(
    query: &str,
    retriever: &dyn Retriever,
    generator: &dyn Generator,
    params: &TtaParams,
) -> Result<TtaResult, TtaError> {
    if params.budget == 0 {
        return Err(TtaError::Params("budget must be at least 1".into()));
    }
    if params.k == 0 {
        return Err(TtaError::Params("k must be at least 1".into()));
    }
    let corpus = retriever.corpus();
    let depth = params.k * params.supplement_depth.max(1);

    let mut state = TtaState {
        working: retriever
            .retrieve(query, params.k)?
            .into_iter()
            .map(|h| h.passage_id)
            .collect(),
        budget_remaining: params.budget,
        ..TtaState::default()
    };
    let mut trace = TtaTrace {
        query: query.to_string(),
        budget: params.budget,
        initial_working: state.working.clone(),
        ..TtaTrace::default()
    };
    if state.working.is_empty() {
        return Err(TtaError::Markup(MarkupError::NoPassages));
    }
    let mut last: Option<Parsed> = None;

    while state.budget_remaining > 0 {
        state.iteration += 1;
        let passages: Vec<Passage> = corpus.resolve(&state.working)?.into_iter().cloned().collect();
        let prompt = render_grounded_prompt(query, &passages)?;
        let req = GenerationRequest {
            prompt: prompt.text,
            temperature: params.temperature,
            top_p: params.top_p,
            num_samples: 1,
            max_tokens: params.max_tokens,
            seed: params.seed.map(|s| s.wrapping_add(state.iteration as u64)),
        };

        let mut raw_outputs = Vec::new();
        let mut usage = Usage::default();
        let mut parsed = None;
        // one retry on an unparseable answer, if budget allows
        for _ in 0..2 {
            if state.budget_remaining == 0 {
                break;
            }
            state.budget_remaining -= 1;
            trace.llm_calls += 1;
            let result = match generator.generate(&req) {
                Ok(r) => r,
                Err(source) => {
                    trace.budget_unused = state.budget_remaining;
                    trace.relevant = state.relevant.clone();
                    return Err(TtaError::Generation {
                        iteration: state.iteration,
                        source,
                        partial: Box::new(trace),
                    });
                }
            };
            usage.add(&result.usage);
            let raw = result.texts.into_iter().next().unwrap_or_default();
            parsed = try_parse(&raw, &state.working);
            raw_outputs.push(raw);
            if parsed.is_some() {
                break;
            }
        }
        let used_fallback = parsed.is_none();
        let parsed = parsed.unwrap_or_else(|| fallback(raw_outputs.last().map(String::as_str).unwrap_or("")));
        trace.usage.add(&usage);

        let cited = dedup(&parsed.citations.iter().flatten().cloned().collect::<Vec<_>>());
        state.relevant = dedup(&[state.relevant.clone(), cited.clone()].concat());
        state.seen = dedup(&[state.seen.clone(), state.working.clone()].concat());

        let mut record = IterationRecord {
            iteration: state.iteration,
            working: state.working.clone(),
            raw_outputs,
            fallback: used_fallback,
            warnings: parsed.warnings.clone(),
            statements: parsed.statements.clone(),
            citations: parsed.citations.clone(),
            cited,
            unsupported: parsed.unsupported.clone(),
            relevant: state.relevant.clone(),
            seen: state.seen.clone(),
            supplements: Vec::new(),
            next_working: None,
            usage,
        };
        last = Some(parsed);

        if state.budget_remaining == 0 {
            trace.iterations.push(record);
            break;
        }

        let unsupported: Vec<&String> = record.unsupported.iter().filter(|u| !u.trim().is_empty()).collect();
        let queries: Vec<String> = if unsupported.is_empty() {
            vec![query.to_string()]
        } else {
            unsupported.into_iter().cloned().collect()
        };
        for q in queries {
            let hits = retriever.retrieve(&q, depth)?.into_iter().map(|h| h.passage_id).collect();
            record.supplements.push(SupplementRetrieval { query: q, hits });
        }
        let lists: Vec<Vec<String>> = record.supplements.iter().map(|s| s.hits.clone()).collect();
        let supplementing = round_robin(&lists);
        let mut next = dedup(&[state.relevant.clone(), set_diff(&supplementing, &state.seen)].concat());
        next.truncate(params.k);
        record.next_working = Some(next.clone());
        trace.iterations.push(record);

        if next.is_empty() {
            trace.early_stop = Some("no passages left to present".into());
            break;
        }
        if next == state.working {
            trace.early_stop = Some("working set unchanged".into());
            break;
        }
        state.working = next;
    }

    trace.budget_unused = state.budget_remaining;
    trace.relevant = state.relevant.clone();
    let last = last.expect("budget >= 1 guarantees one iteration");
    let answer = to_grounded(&last);
    Ok(TtaResult {
        cited_passages: answer.cited_ids(),
        unsupported: last.unsupported.clone(),
        answer,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ScriptedGenerator;
    use crate::retrieval::{Bm25Index, Bm25Params, Corpus};
    use proptest::prelude::*;

    fn v(ids: &[&str]) -> Vec<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn dedup_examples() {
        assert_eq!(dedup(&v(&["a", "b", "a", "c"])), v(&["a", "b", "c"]));
        assert!(dedup(&[]).is_empty());
    }

    #[test]
    fn set_diff_examples() {
        assert_eq!(set_diff(&v(&["a", "b", "c"]), &v(&["b"])), v(&["a", "c"]));
        let x = v(&["x", "y"]);
        assert_eq!(set_diff(&x, &[]), x);
        assert!(set_diff(&x, &x).is_empty());
    }

    #[test]
    fn round_robin_interleaves_by_rank() {
        let merged = round_robin(&[v(&["a", "b", "c"]), v(&["d", "a"]), v(&["e"])]);
        assert_eq!(merged, v(&["a", "d", "e", "b", "c"]));
    }

    proptest! {
        #[test]
        fn dedup_is_idempotent(xs in proptest::collection::vec("[a-e]", 0..20)) {
            let once = dedup(&xs);
            prop_assert_eq!(dedup(&once), once.clone());
            for x in &xs {
                prop_assert!(once.contains(x));
            }
        }

        #[test]
        fn set_diff_keeps_order(xs in proptest::collection::vec("[a-f]", 0..20), ex in proptest::collection::vec("[a-f]", 0..5)) {
            let d = set_diff(&xs, &ex);
            let expected: Vec<String> = xs.iter().filter(|x| !ex.contains(x)).cloned().collect();
            prop_assert_eq!(d, expected);
        }
    }

    fn index() -> Bm25Index {
        let corpus = Corpus::from_passages(vec![
            Passage::new("p1", "Wave", "The largest wave hit the bay."),
            Passage::new("p2", "Quake", "An earthquake struck Alaska."),
            Passage::new("p9", "Slide", "A landslide displaced rock into the water."),
        ])
        .unwrap();
        Bm25Index::build(&corpus, Bm25Params::default())
    }

    #[test]
    fn budget_one_is_single_shot() {
        let g = ScriptedGenerator::new([
            "Answer:\nThe largest wave hit the bay [1].\n\nSentences Not Supported by Citations:\nNone.",
        ]);
        let params = TtaParams { budget: 1, ..TtaParams::default() };
        let r = run_tta("largest wave", &index(), &g, &params).unwrap();
        assert_eq!(g.calls(), 1);
        assert_eq!(r.cited_passages, ["p1"]);
        assert_eq!(r.trace.iterations.len(), 1);
        assert!(r.trace.iterations[0].supplements.is_empty());
    }

    #[test]
    fn unparseable_output_retries_then_falls_back() {
        let g = ScriptedGenerator::new(["garbage", "still garbage"]);
        let params = TtaParams { budget: 2, ..TtaParams::default() };
        let r = run_tta("largest wave", &index(), &g, &params).unwrap();
        assert_eq!(r.trace.llm_calls, 2);
        let it = &r.trace.iterations[0];
        assert!(it.fallback);
        assert_eq!(it.raw_outputs.len(), 2);
        assert_eq!(r.answer.statements, ["still garbage"]);
        assert_eq!(r.unsupported, ["still garbage"]);
    }

    #[test]
    fn retry_recovers() {
        let g = ScriptedGenerator::new([
            "garbage",
            "Answer:\nThe largest wave hit the bay [1].\n\nSentences Not Supported by Citations:\nNone.",
        ]);
        let params = TtaParams { budget: 2, ..TtaParams::default() };
        let r = run_tta("largest wave", &index(), &g, &params).unwrap();
        assert!(!r.trace.iterations[0].fallback);
        assert_eq!(r.cited_passages, ["p1"]);
    }

    #[test]
    fn generator_failure_keeps_partial_trace() {
        let g = ScriptedGenerator::new([
            "Answer:\nX.\n\nSentences Not Supported by Citations:\nX.",
        ]);
        let params = TtaParams { k: 1, budget: 3, ..TtaParams::default() };
        match run_tta("largest wave", &index(), &g, &params).unwrap_err() {
            TtaError::Generation { iteration, partial, .. } => {
                assert_eq!(iteration, 2);
                assert_eq!(partial.iterations.len(), 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_zero_budget() {
        let g = ScriptedGenerator::new(Vec::<String>::new());
        let params = TtaParams { budget: 0, ..TtaParams::default() };
        assert!(matches!(run_tta("q", &index(), &g, &params), Err(TtaError::Params(_))));
    }
}
