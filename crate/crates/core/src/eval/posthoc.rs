use serde::{Deserialize, Serialize};

use super::{EvalError, PredictionRecord};
use crate::backends::{MeteredScorer, NliScorer, Usage};
use crate::grounding::{attach_citations, Thresholds};
use crate::markup::{sentences, strip_citation_markers};
use crate::retrieval::{Passage, Retriever};

/// An answer to be cited after the fact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAnswer {
    pub query_id: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

/// Cites each sentence of one answer with the best of its own top-`k`
/// retrieved passages. Existing markers are discarded first.
pub fn posthoc_cite_one(
    answer: &RawAnswer,
    retriever: &dyn Retriever,
    scorer: &dyn NliScorer,
    k: usize,
    thresholds: Thresholds,
) -> Result<PredictionRecord, EvalError> {
    let metered = MeteredScorer::new(scorer);
    let statements = sentences(&strip_citation_markers(&answer.answer));
    let mut citations = Vec::with_capacity(statements.len());
    for s in &statements {
        let hits = retriever.retrieve(s, k)?;
        let ids: Vec<String> = hits.into_iter().map(|h| h.passage_id).collect();
        let candidates: Vec<Passage> = retriever.corpus().resolve(&ids)?.into_iter().cloned().collect();
        let grounded = attach_citations(std::slice::from_ref(s), &candidates, &metered, thresholds)?;
        citations.push(grounded.citations.into_iter().next().unwrap_or_default());
    }
    Ok(PredictionRecord {
        query_id: answer.query_id.clone(),
        answer: statements.join(" "),
        statements: Some(statements),
        citations: Some(citations),
        passages: None,
        usage: answer.usage,
        nli_usage: Some(Usage {
            prompt_tokens: metered.tokens(),
            completion_tokens: 0,
            estimated: true,
        }),
    })
}

pub fn posthoc_cite(
    answers: &[RawAnswer],
    retriever: &dyn Retriever,
    scorer: &dyn NliScorer,
    k: usize,
    thresholds: Thresholds,
) -> Result<Vec<PredictionRecord>, EvalError> {
    answers
        .iter()
        .map(|a| posthoc_cite_one(a, retriever, scorer, k, thresholds))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::OracleScorer;
    use crate::retrieval::{Bm25Index, Bm25Params, Corpus};

    fn index() -> Bm25Index {
        let corpus = Corpus::from_passages(vec![
            Passage::new("p1", "", "The Eiffel Tower is in Paris."),
            Passage::new("p2", "", "Bananas are yellow fruit."),
        ])
        .unwrap();
        Bm25Index::build(&corpus, Bm25Params::default())
    }

    #[test]
    fn cites_verbatim_support_only() {
        let a = RawAnswer {
            query_id: "q".into(),
            answer: "The Eiffel Tower is in Paris. The moon is cheese.".into(),
            usage: None,
        };
        let p = posthoc_cite_one(&a, &index(), &OracleScorer::new(), 2, Thresholds::default()).unwrap();
        assert_eq!(p.citations.unwrap(), vec![vec!["p1".to_string()], vec![]]);
        assert!(p.nli_usage.unwrap().total() > 0);
    }

    #[test]
    fn empty_answer_has_no_statements() {
        let a = RawAnswer {
            query_id: "q".into(),
            answer: "  ".into(),
            usage: None,
        };
        let p = posthoc_cite_one(&a, &index(), &OracleScorer::new(), 2, Thresholds::default()).unwrap();
        assert!(p.statements.unwrap().is_empty());
    }
}
