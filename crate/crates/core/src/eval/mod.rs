//! Scoring prediction files: citation quality, answer correctness, token cost,
//! and post-hoc citing of uncited answers.

mod citation;
mod correctness;
mod cost;
mod posthoc;

pub use citation::{citation_metrics, CitationDetail, SentenceCitation};
pub use correctness::{em_recall, predicted_label, recall_5, strategyqa_accuracy, GoldAnswer, GoldLabel};
pub use cost::{token_cost, CostSummary};
pub use posthoc::{posthoc_cite, posthoc_cite_one, RawAnswer};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, NliScorer, Usage};
use crate::grounding::GroundingError;
use crate::markup::{parse_marked_response, sentences, strip_citation_markers, ParseWarning};
use crate::retrieval::{Corpus, RetrievalError};

/// Default entailment threshold for citation recall and precision.
pub const ENTAIL_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("unknown passage {0:?}")]
    UnknownPassage(String),
    #[error("answer has citation markers but no passage manifest")]
    MissingManifest,
    #[error("{statements} statements but {citations} citation lists")]
    Misaligned { statements: usize, citations: usize },
    #[error("citation markup: {0}")]
    Markup(ParseWarning),
    #[error("no gold record")]
    MissingGold,
    #[error("gold record does not have the {0} shape")]
    GoldShape(&'static str),
    #[error("duplicate query id {0:?}")]
    DuplicateId(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Grounding(#[from] GroundingError),
}

/// One line of a prediction file.
///
/// Citations are either given resolved (`statements` + `citations`, as written
/// by `infer` and `posthoc-cite`) or as `[n]` markup in `answer` together with
/// the `passages` the indices refer to.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub query_id: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statements: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub citations: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passages: Option<Vec<String>>,
    /// Generator usage for producing this answer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
    /// Entailment-model usage for producing this answer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nli_usage: Option<Usage>,
}

impl PredictionRecord {
    /// Statements paired with the passage ids they cite.
    pub fn resolve(&self) -> Result<Vec<(String, Vec<String>)>, EvalError> {
        if let Some(statements) = &self.statements {
            let citations = self.citations.clone().unwrap_or_else(|| vec![Vec::new(); statements.len()]);
            if citations.len() != statements.len() {
                return Err(EvalError::Misaligned {
                    statements: statements.len(),
                    citations: citations.len(),
                });
            }
            return Ok(statements.iter().cloned().zip(citations).collect());
        }
        let has_markers = strip_citation_markers(&self.answer) != self.answer.split_whitespace().collect::<Vec<_>>().join(" ");
        match &self.passages {
            Some(manifest) => {
                let parsed = parse_marked_response(&self.answer, manifest.len());
                if let Some(w) = parsed
                    .warnings
                    .into_iter()
                    .find(|w| matches!(w, ParseWarning::CitationOutOfRange { .. } | ParseWarning::OrphanCitation { .. }))
                {
                    return Err(EvalError::Markup(w));
                }
                Ok(parsed
                    .response
                    .sentences
                    .into_iter()
                    .map(|s| {
                        let ids = s.citations.iter().map(|&n| manifest[n - 1].clone()).collect();
                        (s.text, ids)
                    })
                    .collect())
            }
            None if has_markers => Err(EvalError::MissingManifest),
            None => Ok(sentences(&self.answer).into_iter().map(|s| (s, Vec::new())).collect()),
        }
    }

    /// The answer text with markup removed, used for correctness matching.
    pub fn plain_answer(&self) -> String {
        match &self.statements {
            Some(s) if self.answer.trim().is_empty() => s.join(" "),
            _ => strip_citation_markers(&self.answer),
        }
    }
}

/// One line of a gold file. Exactly one answer shape is expected to be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub short_answers: Option<Vec<GoldAnswer>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<GoldLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_list: Option<Vec<GoldAnswer>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetStyle {
    Nq,
    Strategyqa,
    Asqa,
    Qampari,
    CitationsOnly,
}

impl DatasetStyle {
    /// Name of the correctness metric, or `None` when only citations are scored.
    pub fn metric_name(self) -> Option<&'static str> {
        match self {
            DatasetStyle::Nq | DatasetStyle::Asqa => Some("em_recall"),
            DatasetStyle::Strategyqa => Some("accuracy"),
            DatasetStyle::Qampari => Some("recall_5"),
            DatasetStyle::CitationsOnly => None,
        }
    }

    fn correctness(self, prediction: &PredictionRecord, gold: &GoldRecord) -> Result<f64, EvalError> {
        let answer = prediction.plain_answer();
        match self {
            DatasetStyle::Nq | DatasetStyle::Asqa => match (&gold.short_answers, &gold.label, &gold.answer_list) {
                (Some(a), None, None) => Ok(em_recall(&answer, a)),
                _ => Err(EvalError::GoldShape("short_answers")),
            },
            DatasetStyle::Strategyqa => match (&gold.short_answers, &gold.label, &gold.answer_list) {
                (None, Some(l), None) => Ok(strategyqa_accuracy(&answer, *l)),
                _ => Err(EvalError::GoldShape("label")),
            },
            DatasetStyle::Qampari => match (&gold.short_answers, &gold.label, &gold.answer_list) {
                (None, None, Some(a)) => Ok(recall_5(&answer, a)),
                _ => Err(EvalError::GoldShape("answer_list")),
            },
            DatasetStyle::CitationsOnly => Ok(0.0),
        }
    }
}

impl std::str::FromStr for DatasetStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nq" => Ok(DatasetStyle::Nq),
            "strategyqa" => Ok(DatasetStyle::Strategyqa),
            "asqa" => Ok(DatasetStyle::Asqa),
            "qampari" => Ok(DatasetStyle::Qampari),
            "citations-only" => Ok(DatasetStyle::CitationsOnly),
            other => Err(format!("unknown dataset style {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub sentences: usize,
    pub recalled: usize,
    pub citations: usize,
    pub precise: usize,
    pub citation_recall: f64,
    pub citation_precision: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correctness: Option<f64>,
    pub llm_tokens: u64,
    pub nli_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryFailure {
    pub query_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correctness {
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub style: DatasetStyle,
    pub entail_threshold: f64,
    pub scored: usize,
    /// Fraction of all sentences across scored queries that are recalled.
    pub citation_recall: f64,
    /// Fraction of all citations across scored queries that are precise.
    pub citation_precision: f64,
    /// Mean of the per-query recall values.
    pub citation_recall_macro: f64,
    /// Mean of the per-query precision values.
    pub citation_precision_macro: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correctness: Option<Correctness>,
    pub cost: CostSummary,
    pub per_query: Vec<QueryMetrics>,
    pub errors: Vec<QueryFailure>,
    /// Gold ids with no prediction.
    pub missing_predictions: Vec<String>,
}

impl MetricsReport {
    /// Whether any prediction or gold record could not be scored.
    pub fn has_mismatches(&self) -> bool {
        !self.errors.is_empty() || !self.missing_predictions.is_empty()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Scores every prediction. Queries that fail (unknown passages, bad markup,
/// missing gold, scorer errors) are listed in `errors` and left out of every
/// aggregate.
pub fn evaluate(
    predictions: &[PredictionRecord],
    gold: &[GoldRecord],
    style: DatasetStyle,
    corpus: &Corpus,
    scorer: &dyn NliScorer,
    entail_threshold: f64,
) -> MetricsReport {
    let gold_by_id: BTreeMap<&str, &GoldRecord> = gold.iter().map(|g| (g.query_id.as_str(), g)).collect();
    let mut seen = BTreeSet::new();
    let mut per_query = Vec::new();
    let mut scored_records = Vec::new();
    let mut errors = Vec::new();

    for p in predictions {
        let outcome = (|| {
            if !seen.insert(p.query_id.as_str()) {
                return Err(EvalError::DuplicateId(p.query_id.clone()));
            }
            let correctness = match style.metric_name() {
                None => None,
                Some(_) => {
                    let g = gold_by_id.get(p.query_id.as_str()).ok_or(EvalError::MissingGold)?;
                    Some(style.correctness(p, g)?)
                }
            };
            let detail = citation_metrics(&p.resolve()?, corpus, scorer, entail_threshold)?;
            Ok((detail, correctness))
        })();
        match outcome {
            Ok((d, correctness)) => {
                let (llm_tokens, nli_tokens) = cost::record_tokens(p);
                per_query.push(QueryMetrics {
                    query_id: p.query_id.clone(),
                    sentences: d.sentences.len(),
                    recalled: d.recalled(),
                    citations: d.citation_count(),
                    precise: d.precise(),
                    citation_recall: d.recall(),
                    citation_precision: d.precision(),
                    correctness,
                    llm_tokens: llm_tokens.0,
                    nli_tokens: nli_tokens.0,
                });
                scored_records.push(p.clone());
            }
            Err(e) => errors.push(QueryFailure {
                query_id: p.query_id.clone(),
                error: e.to_string(),
            }),
        }
    }

    let missing_predictions = if style.metric_name().is_some() {
        gold.iter()
            .filter(|g| !seen.contains(g.query_id.as_str()))
            .map(|g| g.query_id.clone())
            .collect()
    } else {
        Vec::new()
    };

    let total_sentences: usize = per_query.iter().map(|q| q.sentences).sum();
    let total_citations: usize = per_query.iter().map(|q| q.citations).sum();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    MetricsReport {
        style,
        entail_threshold,
        scored: per_query.len(),
        citation_recall: ratio(per_query.iter().map(|q| q.recalled).sum(), total_sentences),
        citation_precision: ratio(per_query.iter().map(|q| q.precise).sum(), total_citations),
        citation_recall_macro: mean(per_query.iter().map(|q| q.citation_recall)),
        citation_precision_macro: mean(per_query.iter().map(|q| q.citation_precision)),
        correctness: style.metric_name().map(|metric| Correctness {
            metric: metric.to_string(),
            value: mean(per_query.iter().filter_map(|q| q.correctness)),
        }),
        cost: token_cost(&scored_records),
        per_query,
        errors,
        missing_predictions,
    }
}

/// Human-readable summary of a report.
pub fn render_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    let pct = |v: f64| format!("{:.1}", v * 100.0);
    let _ = writeln!(out, "{:<28}{:>10}", "metric", "value");
    let _ = writeln!(out, "{:<28}{:>10}", "queries scored", report.scored);
    if let Some(c) = &report.correctness {
        let _ = writeln!(out, "{:<28}{:>10}", c.metric, pct(c.value));
    }
    let _ = writeln!(out, "{:<28}{:>10}", "citation_recall", pct(report.citation_recall));
    let _ = writeln!(out, "{:<28}{:>10}", "citation_precision", pct(report.citation_precision));
    let _ = writeln!(out, "{:<28}{:>10}", "citation_recall (macro)", pct(report.citation_recall_macro));
    let _ = writeln!(out, "{:<28}{:>10}", "citation_precision (macro)", pct(report.citation_precision_macro));
    let est = |flag: bool| if flag { " (est.)" } else { "" };
    let _ = writeln!(
        out,
        "{:<28}{:>10.1}{}",
        "llm tokens / query",
        report.cost.llm_tokens,
        est(report.cost.llm_estimated)
    );
    let _ = writeln!(
        out,
        "{:<28}{:>10.1}{}",
        "nli tokens / query",
        report.cost.nli_tokens,
        est(report.cost.nli_estimated)
    );
    if !report.errors.is_empty() {
        let _ = writeln!(out, "{} queries not scored:", report.errors.len());
        for e in &report.errors {
            let _ = writeln!(out, "  {}: {}", e.query_id, e.error);
        }
    }
    if !report.missing_predictions.is_empty() {
        let _ = writeln!(out, "{} gold ids without predictions:", report.missing_predictions.len());
        for id in &report.missing_predictions {
            let _ = writeln!(out, "  {id}");
        }
    }
    out
}

/// Reads a JSONL file, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_jsonl(&text)
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::OracleScorer;
    use crate::retrieval::Passage;

    fn corpus() -> Corpus {
        Corpus::from_passages(vec![
            Passage::new("a", "Lituya Bay", "The largest wave occurred in Lituya Bay."),
            Passage::new("b", "Alaska", "Lituya Bay is in Alaska."),
        ])
        .unwrap()
    }

    #[test]
    fn resolves_markup_through_manifest() {
        let p = PredictionRecord {
            query_id: "q".into(),
            answer: "Answer:\nThe largest wave occurred in Lituya Bay [2]. It is in Alaska.".into(),
            passages: Some(vec!["b".into(), "a".into()]),
            ..Default::default()
        };
        let r = p.resolve().unwrap();
        assert_eq!(r[0].1, ["a"]);
        assert!(r[1].1.is_empty());
    }

    #[test]
    fn markup_without_manifest_is_an_error() {
        let p = PredictionRecord {
            query_id: "q".into(),
            answer: "It happened [1].".into(),
            ..Default::default()
        };
        assert!(matches!(p.resolve(), Err(EvalError::MissingManifest)));
    }

    #[test]
    fn out_of_range_marker_is_an_error() {
        let p = PredictionRecord {
            query_id: "q".into(),
            answer: "It happened [3].".into(),
            passages: Some(vec!["a".into()]),
            ..Default::default()
        };
        assert!(matches!(p.resolve(), Err(EvalError::Markup(_))));
    }

    #[test]
    fn plain_answer_is_uncited() {
        let p = PredictionRecord {
            query_id: "q".into(),
            answer: "One. Two.".into(),
            ..Default::default()
        };
        assert_eq!(p.resolve().unwrap().len(), 2);
    }

    #[test]
    fn evaluate_nq_style() {
        let preds = vec![
            PredictionRecord {
                query_id: "q1".into(),
                answer: "The largest wave occurred in Lituya Bay. It is in Alaska.".into(),
                statements: Some(vec![
                    "The largest wave occurred in Lituya Bay.".into(),
                    "It is in Alaska.".into(),
                ]),
                citations: Some(vec![vec!["a".into()], vec![]]),
                ..Default::default()
            },
            PredictionRecord {
                query_id: "q2".into(),
                answer: "Unknown.".into(),
                statements: Some(vec!["Unknown.".into()]),
                citations: Some(vec![vec!["zzz".into()]]),
                ..Default::default()
            },
        ];
        let gold = vec![
            GoldRecord {
                query_id: "q1".into(),
                short_answers: Some(vec![GoldAnswer::One("Lituya Bay".into())]),
                ..Default::default()
            },
            GoldRecord {
                query_id: "q3".into(),
                short_answers: Some(vec![GoldAnswer::One("x".into())]),
                ..Default::default()
            },
        ];
        let report = evaluate(&preds, &gold, DatasetStyle::Nq, &corpus(), &OracleScorer::new(), ENTAIL_THRESHOLD);
        assert_eq!(report.scored, 1);
        assert_eq!(report.citation_recall, 0.5);
        assert_eq!(report.citation_precision, 1.0);
        assert_eq!(report.correctness.as_ref().unwrap().value, 1.0);
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.missing_predictions, ["q3"]);
        assert!(report.has_mismatches());
        let table = render_table(&report);
        assert!(table.contains("em_recall"));
    }

    #[test]
    fn citations_only_has_no_correctness() {
        let preds = vec![PredictionRecord {
            query_id: "q1".into(),
            answer: "Lituya Bay is in Alaska.".into(),
            statements: Some(vec!["Lituya Bay is in Alaska.".into()]),
            citations: Some(vec![vec!["b".into()]]),
            ..Default::default()
        }];
        let report = evaluate(&preds, &[], DatasetStyle::CitationsOnly, &corpus(), &OracleScorer::new(), ENTAIL_THRESHOLD);
        assert!(report.correctness.is_none());
        let json = serde_json::to_value(&report).unwrap();
        assert!(json.get("correctness").is_none());
        assert_eq!(report.citation_recall, 1.0);
    }

    #[test]
    fn wrong_gold_shape_is_recorded() {
        let preds = vec![PredictionRecord {
            query_id: "q1".into(),
            answer: "Yes.".into(),
            ..Default::default()
        }];
        let gold = vec![GoldRecord {
            query_id: "q1".into(),
            short_answers: Some(vec![GoldAnswer::One("yes".into())]),
            ..Default::default()
        }];
        let report = evaluate(&preds, &gold, DatasetStyle::Strategyqa, &corpus(), &OracleScorer::new(), ENTAIL_THRESHOLD);
        assert_eq!(report.scored, 0);
        assert!(report.errors[0].error.contains("label"));
    }

    #[test]
    fn dataset_style_parses() {
        assert_eq!("citations-only".parse::<DatasetStyle>().unwrap(), DatasetStyle::CitationsOnly);
        assert!("fever".parse::<DatasetStyle>().is_err());
    }

    #[test]
    fn jsonl_reports_line_numbers() {
        let err = parse_jsonl::<GoldRecord>("{\"query_id\":\"a\"}\n\nnot json\n").unwrap_err();
        assert!(matches!(err, EvalError::MalformedLine { line: 3, .. }));
    }
}
