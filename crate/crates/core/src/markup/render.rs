use serde::{Deserialize, Serialize};

use super::{MarkedResponse, MarkedSentence, MarkupError, ANSWER_HEADER, NONE_MARKER, UNSUPPORTED_HEADER};
use crate::grounding::GroundedResponse;
use crate::retrieval::Passage;

/// Version of the bundled template set under `templates/`.
pub const TEMPLATE_VERSION: &str = "v1";

const ZERO_SHOT_INSTRUCTION: &str = include_str!("../../templates/v1/zero_shot_instruction.txt");
const GROUNDED_INSTRUCTION: &str = include_str!("../../templates/v1/grounded_instruction.txt");

/// A prompt plus the passage ids behind each `[n]` header (`passage_order[n - 1]`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub passage_order: Vec<String>,
}

fn search_results(passages: &[Passage]) -> String {
    passages
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let header = format!("[{}] {}", i + 1, p.title);
            format!("{}\n{}", header.trim_end(), p.text)
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn check_inputs(query: &str, passages: &[Passage]) -> Result<(), MarkupError> {
    if query.trim().is_empty() {
        return Err(MarkupError::EmptyQuery);
    }
    if passages.is_empty() {
        return Err(MarkupError::NoPassages);
    }
    Ok(())
}

/// The zero-shot sampling prompt: instruction, question, numbered search
/// results, and a trailing `Answer:` cue.
pub fn render_zero_shot_prompt(query: &str, passages: &[Passage]) -> Result<RenderedPrompt, MarkupError> {
    check_inputs(query, passages)?;
    Ok(RenderedPrompt {
        text: format!(
            "{ZERO_SHOT_INSTRUCTION}\n\n{query}\n\nSearch Results:\n{}\n\n{ANSWER_HEADER}",
            search_results(passages)
        ),
        passage_order: passages.iter().map(|p| p.id.clone()).collect(),
    })
}

/// The grounded-answer prompt used for tuning data and for inference with the
/// adapted model. The model's reply is expected in the format produced by
/// [`render_marked_response`].
pub fn render_grounded_prompt(query: &str, passages: &[Passage]) -> Result<RenderedPrompt, MarkupError> {
    check_inputs(query, passages)?;
    Ok(RenderedPrompt {
        text: format!(
            "{GROUNDED_INSTRUCTION}\n\nQuestion:\n{query}\n\nSearch Results:\n{}",
            search_results(passages)
        ),
        passage_order: passages.iter().map(|p| p.id.clone()).collect(),
    })
}

fn render_sentence(s: &MarkedSentence) -> String {
    if s.citations.is_empty() {
        return s.text.clone();
    }
    let markers: String = s.citations.iter().map(|c| format!("[{c}]")).collect();
    let body = s.text.trim_end_matches(['.', '?', '!']);
    let tail = &s.text[body.len()..];
    format!("{} {markers}{tail}", body.trim_end())
}

/// Writes the answer section (citations placed before sentence-final
/// punctuation) followed by the unsupported-sentence section.
pub fn render_marked_response(m: &MarkedResponse) -> String {
    let body = m.sentences.iter().map(render_sentence).collect::<Vec<_>>().join(" ");
    let unsupported = if m.unsupported.is_empty() {
        NONE_MARKER.to_string()
    } else {
        m.unsupported.join("\n")
    };
    format!("{ANSWER_HEADER}\n{body}\n\n{UNSUPPORTED_HEADER}\n{unsupported}")
}

/// Converts passage-id citations into working-set indices and renders the
/// supervision target.
pub fn render_training_output(response: &GroundedResponse, working_set: &[String]) -> Result<String, MarkupError> {
    Ok(render_marked_response(&to_marked(response, working_set)?))
}

pub(crate) fn to_marked(response: &GroundedResponse, working_set: &[String]) -> Result<MarkedResponse, MarkupError> {
    let mut sentences = Vec::with_capacity(response.statements.len());
    for (i, (text, cited)) in response.statements.iter().zip(&response.citations).enumerate() {
        let mut idx = Vec::with_capacity(cited.len());
        for id in cited {
            let pos = working_set.iter().position(|w| w == id).ok_or_else(|| {
                MarkupError::CitationOutsideWorkingSet {
                    statement: i,
                    passage_id: id.clone(),
                }
            })?;
            idx.push(pos + 1);
        }
        sentences.push(MarkedSentence::new(text.clone(), idx));
    }
    let mut unsupported = Vec::with_capacity(response.unsupported.len());
    for &u in &response.unsupported {
        let text = response
            .statements
            .get(u)
            .ok_or(MarkupError::BadStatementIndex(u))?;
        unsupported.push(text.clone());
    }
    Ok(MarkedResponse { sentences, unsupported })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn citation_goes_before_period() {
        assert_eq!(render_sentence(&MarkedSentence::new("X is Y.", [1])), "X is Y [1].");
        assert_eq!(render_sentence(&MarkedSentence::new("Is it?!", [2, 1])), "Is it [1][2]?!");
        assert_eq!(render_sentence(&MarkedSentence::new("no stop", [3])), "no stop [3]");
        assert_eq!(render_sentence(&MarkedSentence::new("plain.", [])), "plain.");
    }

    #[test]
    fn numbering_follows_input_order() {
        let p1 = Passage::new("p1", "One", "first");
        let p2 = Passage::new("p2", "Two", "second");
        let r = render_zero_shot_prompt("q?", &[p2.clone(), p1.clone()]).unwrap();
        assert_eq!(r.passage_order, ["p2", "p1"]);
        assert!(r.text.contains("[1] Two\nsecond\n\n[2] One\nfirst"));
        assert_eq!(r, render_zero_shot_prompt("q?", &[p2, p1]).unwrap());
    }

    #[test]
    fn empty_inputs_rejected() {
        let p = Passage::new("p", "T", "x");
        assert_eq!(render_zero_shot_prompt("q", &[]), Err(MarkupError::NoPassages));
        assert_eq!(render_grounded_prompt("", &[p]), Err(MarkupError::EmptyQuery));
    }

    #[test]
    fn untitled_passage_header_has_no_trailing_space() {
        let r = render_grounded_prompt("q", &[Passage::new("p", "", "body")]).unwrap();
        assert!(r.text.ends_with("Search Results:\n[1]\nbody"));
    }

    #[test]
    fn training_output_rejects_foreign_citation() {
        let g = GroundedResponse {
            statements: vec!["A.".into()],
            citations: vec![vec!["zz".into()]],
            unsupported: Default::default(),
            per_statement_score: None,
        };
        let err = render_training_output(&g, &["p1".into()]).unwrap_err();
        assert!(matches!(err, MarkupError::CitationOutsideWorkingSet { .. }));
    }
}
