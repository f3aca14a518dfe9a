//! Citation attachment and the grounding score.
//!
//! The grounding score of a response with statements `s_1..s_n` and citation
//! sets `E_1..E_n` is the mean over statements of the entailment score of
//! `s_i` given the concatenation of its cited passages. A statement with no
//! citation contributes 0 and costs no scorer call.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, NliScorer};
use crate::retrieval::{Corpus, Passage};

/// Default score a passage must exceed to be cited.
pub const LINK_THRESHOLD: f64 = 0.7;
/// Default entailment boundary: a statement whose best passage scores at or
/// below this is unsupported.
pub const SUPPORT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum GroundingError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("unknown passage id {0:?}")]
    UnknownPassage(String),
    #[error("response has no statements")]
    NoStatements,
    #[error("no candidate passages")]
    NoCandidates,
    #[error("empty citation set has no evidence")]
    EmptyEvidence,
    #[error("thresholds must satisfy 0 <= support <= link <= 1 (support {support}, link {link})")]
    BadThresholds { support: f64, link: f64 },
    #[error("response has {statements} statements but {citations} citation sets")]
    Misaligned { statements: usize, citations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub link: f64,
    pub support: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            link: LINK_THRESHOLD,
            support: SUPPORT_THRESHOLD,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), GroundingError> {
        if 0.0 <= self.support && self.support <= self.link && self.link <= 1.0 {
            Ok(())
        } else {
            Err(GroundingError::BadThresholds {
                support: self.support,
                link: self.link,
            })
        }
    }
}

/// Statements with per-statement citation sets (passage ids) and the indices
/// of unsupported statements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedResponse {
    pub statements: Vec<String>,
    pub citations: Vec<Vec<String>>,
    pub unsupported: BTreeSet<usize>,
    /// Best entailment score per statement, when produced by [`attach_citations`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_statement_score: Option<Vec<f64>>,
}

impl GroundedResponse {
    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    pub fn cited_ids(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for id in self.citations.iter().flatten() {
            if !out.contains(id) {
                out.push(id.clone());
            }
        }
        out
    }

    /// The JSON record form `{statements, citations, unsupported, g}`.
    pub fn to_record(&self, g: f64) -> GroundedRecord {
        GroundedRecord {
            statements: self.statements.clone(),
            citations: self.citations.clone(),
            unsupported: self.unsupported.iter().copied().collect(),
            g,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedRecord {
    pub statements: Vec<String>,
    pub citations: Vec<Vec<String>>,
    pub unsupported: Vec<usize>,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatementScore {
    pub index: usize,
    pub phi: f64,
    pub cited: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingReport {
    pub g: f64,
    pub per_statement: Vec<StatementScore>,
}

/// Links each statement to its best-supporting candidate.
///
/// The best candidate maximizes the score of `premise = "Title\nText"`, with
/// earlier candidates winning ties. It is cited when its score exceeds
/// `thresholds.link`; the statement is unsupported when that best score is at
/// most `thresholds.support`. Scores in between leave the statement uncited but
/// not unsupported.
pub fn attach_citations(
    statements: &[String],
    candidates: &[Passage],
    scorer: &dyn NliScorer,
    thresholds: Thresholds,
) -> Result<GroundedResponse, GroundingError> {
    thresholds.validate()?;
    if statements.is_empty() {
        return Err(GroundingError::NoStatements);
    }
    if candidates.is_empty() {
        return Err(GroundingError::NoCandidates);
    }
    let premises: Vec<String> = candidates.iter().map(Passage::premise).collect();
    let mut citations = Vec::with_capacity(statements.len());
    let mut unsupported = BTreeSet::new();
    let mut best_scores = Vec::with_capacity(statements.len());
    for (i, statement) in statements.iter().enumerate() {
        let pairs: Vec<(String, String)> =
            premises.iter().map(|p| (p.clone(), statement.clone())).collect();
        let scores = scorer.score_batch(&pairs)?;
        let (best, best_score) = scores
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bs), (ci, s)| {
                if s.value() > bs {
                    (ci, s.value())
                } else {
                    (bi, bs)
                }
            });
        if best_score > thresholds.link {
            citations.push(vec![candidates[best].id.clone()]);
        } else {
            citations.push(Vec::new());
        }
        if best_score <= thresholds.support {
            unsupported.insert(i);
        }
        best_scores.push(best_score);
    }
    Ok(GroundedResponse {
        statements: statements.to_vec(),
        citations,
        unsupported,
        per_statement_score: Some(best_scores),
    })
}

/// `Title\nText` blocks of the cited passages, in citation order, separated by
/// a blank line.
pub fn concat_evidence<S: AsRef<str>>(passage_ids: &[S], corpus: &Corpus) -> Result<String, GroundingError> {
    if passage_ids.is_empty() {
        return Err(GroundingError::EmptyEvidence);
    }
    let blocks = passage_ids
        .iter()
        .map(|id| {
            corpus
                .get(id.as_ref())
                .map(Passage::premise)
                .ok_or_else(|| GroundingError::UnknownPassage(id.as_ref().to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(blocks.join("\n\n"))
}

pub fn grounding_score(
    response: &GroundedResponse,
    corpus: &Corpus,
    scorer: &dyn NliScorer,
) -> Result<GroundingReport, GroundingError> {
    if response.statements.is_empty() {
        return Err(GroundingError::NoStatements);
    }
    if response.citations.len() != response.statements.len() {
        return Err(GroundingError::Misaligned {
            statements: response.statements.len(),
            citations: response.citations.len(),
        });
    }
    // resolve everything before the first scorer call
    for id in response.citations.iter().flatten() {
        if corpus.get(id).is_none() {
            return Err(GroundingError::UnknownPassage(id.clone()));
        }
    }
    let mut per_statement = Vec::with_capacity(response.statements.len());
    for (index, (statement, cited)) in response.statements.iter().zip(&response.citations).enumerate() {
        let phi = if cited.is_empty() {
            0.0
        } else {
            scorer.score(&concat_evidence(cited, corpus)?, statement)?.value()
        };
        per_statement.push(StatementScore {
            index,
            phi,
            cited: cited.clone(),
        });
    }
    let g = per_statement.iter().map(|s| s.phi).sum::<f64>() / per_statement.len() as f64;
    Ok(GroundingReport { g, per_statement })
}
