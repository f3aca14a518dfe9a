use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::backends::NliScorer;
use crate::grounding::concat_evidence;
use crate::retrieval::Corpus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceCitation {
    pub statement: String,
    pub cited: Vec<String>,
    /// Score of the concatenated evidence; 0 when nothing is cited.
    pub entailment: f64,
    pub recalled: bool,
    /// One flag per entry of `cited`.
    pub precise: Vec<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CitationDetail {
    pub sentences: Vec<SentenceCitation>,
}

impl CitationDetail {
    pub fn recalled(&self) -> usize {
        self.sentences.iter().filter(|s| s.recalled).count()
    }

    pub fn citation_count(&self) -> usize {
        self.sentences.iter().map(|s| s.cited.len()).sum()
    }

    pub fn precise(&self) -> usize {
        self.sentences.iter().flat_map(|s| &s.precise).filter(|p| **p).count()
    }

    /// Recalled sentences over all sentences; 0 for an empty answer.
    pub fn recall(&self) -> f64 {
        if self.sentences.is_empty() {
            0.0
        } else {
            self.recalled() as f64 / self.sentences.len() as f64
        }
    }

    /// Precise citations over all citations; 0 when nothing is cited.
    pub fn precision(&self) -> f64 {
        match self.citation_count() {
            0 => 0.0,
            n => self.precise() as f64 / n as f64,
        }
    }
}

fn entailment(ids: &[String], statement: &str, corpus: &Corpus, scorer: &dyn NliScorer) -> Result<f64, EvalError> {
    if ids.is_empty() {
        return Ok(0.0);
    }
    Ok(scorer.score(&concat_evidence(ids, corpus)?, statement)?.value())
}

/// Citation recall and precision for one answer.
///
/// A sentence is recalled when it cites something and the concatenated
/// evidence scores at least `threshold`. A citation is precise when its
/// sentence is recalled and either it entails the sentence on its own or the
/// remaining citations no longer do.
pub fn citation_metrics(
    statements: &[(String, Vec<String>)],
    corpus: &Corpus,
    scorer: &dyn NliScorer,
    threshold: f64,
) -> Result<CitationDetail, EvalError> {
    for id in statements.iter().flat_map(|(_, ids)| ids) {
        if corpus.get(id).is_none() {
            return Err(EvalError::UnknownPassage(id.clone()));
        }
    }
    let mut detail = CitationDetail::default();
    for (statement, cited) in statements {
        let score = entailment(cited, statement, corpus, scorer)?;
        let recalled = !cited.is_empty() && score >= threshold;
        let mut precise = Vec::with_capacity(cited.len());
        for (i, c) in cited.iter().enumerate() {
            if !recalled {
                precise.push(false);
                continue;
            }
            if cited.len() == 1 {
                precise.push(true);
                continue;
            }
            let alone = entailment(std::slice::from_ref(c), statement, corpus, scorer)? >= threshold;
            let ok = alone || {
                let rest: Vec<String> = cited.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, r)| r.clone()).collect();
                entailment(&rest, statement, corpus, scorer)? < threshold
            };
            precise.push(ok);
        }
        detail.sentences.push(SentenceCitation {
            statement: statement.clone(),
            cited: cited.clone(),
            entailment: score,
            recalled,
            precise,
        });
    }
    Ok(detail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::OracleScorer;
    use crate::retrieval::Passage;

    fn corpus() -> Corpus {
        Corpus::from_passages(vec![
            Passage::new("p1", "", "Paris is the capital of France."),
            Passage::new("p2", "", "France is in Europe."),
            Passage::new("p3", "", "Bananas are yellow."),
        ])
        .unwrap()
    }

    fn s(text: &str, ids: &[&str]) -> (String, Vec<String>) {
        (text.to_string(), ids.iter().map(|i| i.to_string()).collect())
    }

    #[test]
    fn all_cited_and_entailed() {
        let d = citation_metrics(
            &[s("Paris is the capital of France.", &["p1"]), s("France is in Europe.", &["p2"])],
            &corpus(),
            &OracleScorer::new(),
            0.5,
        )
        .unwrap();
        assert_eq!(d.recall(), 1.0);
        assert_eq!(d.precision(), 1.0);
    }

    #[test]
    fn half_uncited() {
        let d = citation_metrics(
            &[s("Paris is the capital of France.", &["p1"]), s("France is in Europe.", &[])],
            &corpus(),
            &OracleScorer::new(),
            0.5,
        )
        .unwrap();
        assert_eq!(d.recall(), 0.5);
    }

    #[test]
    fn redundant_citation_is_imprecise() {
        // p1 alone entails; p3 adds nothing and removing it keeps entailment
        let d = citation_metrics(
            &[s("Paris is the capital of France.", &["p1", "p3"])],
            &corpus(),
            &OracleScorer::new(),
            0.5,
        )
        .unwrap();
        assert_eq!(d.sentences[0].precise, [true, false]);
        assert_eq!(d.precision(), 0.5);
    }

    #[test]
    fn jointly_needed_citations_are_precise() {
        let scorer = OracleScorer::new().with_override(
            "\nParis is the capital of France.\n\n\nFrance is in Europe.",
            "Paris is in Europe.",
            0.9,
        );
        let d = citation_metrics(&[s("Paris is in Europe.", &["p1", "p2"])], &corpus(), &scorer, 0.5).unwrap();
        assert!(d.sentences[0].recalled);
        assert_eq!(d.sentences[0].precise, [true, true]);
    }

    #[test]
    fn nothing_cited_means_zero_precision() {
        let d = citation_metrics(&[s("Anything.", &[])], &corpus(), &OracleScorer::new(), 0.5).unwrap();
        assert_eq!(d.precision(), 0.0);
        assert_eq!(d.recall(), 0.0);
    }

    #[test]
    fn unknown_passage_fails_before_scoring() {
        let scorer = OracleScorer::new();
        let err = citation_metrics(&[s("X.", &["p1"]), s("Y.", &["nope"])], &corpus(), &scorer, 0.5).unwrap_err();
        assert!(matches!(err, EvalError::UnknownPassage(_)));
        assert_eq!(scorer.calls(), 0);
    }
}
