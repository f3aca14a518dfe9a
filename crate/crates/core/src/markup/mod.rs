//! Sentence segmentation, `[n]` citation markup, and prompt templates.

mod parse;
mod render;
mod segment;

pub use parse::{parse_marked_response, strip_citation_markers, ParseWarning, ParsedResponse};
pub use render::{
    render_grounded_prompt, render_marked_response, render_training_output,
    render_zero_shot_prompt, RenderedPrompt, TEMPLATE_VERSION,
};
pub use segment::{segment, sentences, SentenceSpan, ABBREVIATIONS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Heading that opens the answer section of a grounded response.
pub const ANSWER_HEADER: &str = "Answer:";
/// Heading that opens the self-reported unsupported-statement section.
pub const UNSUPPORTED_HEADER: &str = "Sentences Not Supported by Citations:";
/// Body of the unsupported section when every sentence is supported.
pub const NONE_MARKER: &str = "None.";

#[derive(Debug, Error, PartialEq)]
pub enum MarkupError {
    #[error("no passages to render")]
    NoPassages,
    #[error("query is empty")]
    EmptyQuery,
    #[error("statement {statement} cites {passage_id:?}, which is not in the working set")]
    CitationOutsideWorkingSet { statement: usize, passage_id: String },
    #[error("statement index {0} out of range")]
    BadStatementIndex(usize),
}

/// One answer sentence with its 1-based working-set citation indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedSentence {
    pub text: String,
    pub citations: Vec<usize>,
}

impl MarkedSentence {
    pub fn new(text: impl Into<String>, citations: impl IntoIterator<Item = usize>) -> Self {
        let mut citations: Vec<usize> = citations.into_iter().collect();
        citations.sort_unstable();
        citations.dedup();
        Self {
            text: text.into(),
            citations,
        }
    }
}

/// The structure of a grounded response as written in markup.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedResponse {
    pub sentences: Vec<MarkedSentence>,
    /// Self-reported unsupported sentences, verbatim.
    pub unsupported: Vec<String>,
}

impl MarkedResponse {
    /// Indices of sentences whose text appears in the unsupported list.
    pub fn unsupported_indices(&self) -> Vec<usize> {
        self.sentences
            .iter()
            .enumerate()
            .filter(|(_, s)| self.unsupported.contains(&s.text))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Lowercases, strips punctuation and collapses whitespace.
///
/// Shared by the answer-matching metrics and the rule-based entailment double.
pub fn normalize(text: &str) -> String {
    let stripped: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("  Lituya Bay,  Alaska! "), "lituya bay alaska");
        assert_eq!(normalize("U.S.\nARMY"), "us army");
        assert_eq!(normalize("..."), "");
    }

    #[test]
    fn marked_sentence_sorts_and_dedups() {
        assert_eq!(MarkedSentence::new("x", [3, 1, 3]).citations, [1, 3]);
    }
}
