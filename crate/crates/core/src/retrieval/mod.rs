//! Passage corpora and ranked retrieval.
//!
//! The default retriever is a lexical BM25 index ([`Bm25Index`]). Anything
//! implementing [`Retriever`] can stand in for it, including the HTTP client
//! in [`remote`] for a dense retrieval service.

mod bm25;
mod corpus;
pub mod remote;

pub use bm25::{Bm25Index, Bm25Params, INDEX_FORMAT_VERSION};
pub use bm25::write_atomic;
pub use corpus::{load_corpus, Corpus, Passage};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("duplicate passage id {id:?} (lines {first_line} and {line})")]
    DuplicateIdAt { id: String, first_line: usize, line: usize },
    #[error("duplicate passage id {id:?}")]
    DuplicateId { id: String },
    #[error("passage {id:?} has empty text")]
    EmptyText { id: String },
    #[error("unknown passage id {id:?}")]
    UnknownPassage { id: String },
    #[error("query is empty")]
    EmptyQuery,
    #[error("top_k must be positive")]
    ZeroTopK,
    #[error("index at {path} already exists")]
    IndexExists { path: String },
    #[error("index format: {0}")]
    Format(String),
    #[error("retrieval service: {0}")]
    Remote(String),
}

/// One ranked result. Ranks are 1-based and consecutive within a result list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub passage_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Ranked top-k retrieval over a fixed corpus.
///
/// Implementations are immutable once built and may be shared across threads.
pub trait Retriever: Send + Sync {
    /// At most `top_k` hits, score descending, ties by ascending passage id.
    fn retrieve(&self, query: &str, top_k: usize) -> Result<Vec<RetrievalHit>, RetrievalError>;

    fn corpus(&self) -> &Corpus;
}

/// Lowercases and splits on every non-alphanumeric character. No stemming.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub(crate) fn check_query(query: &str, top_k: usize) -> Result<(), RetrievalError> {
    if query.trim().is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    if top_k == 0 {
        return Err(RetrievalError::ZeroTopK);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::tokenize;

    #[test]
    fn tokenize_lowercases_and_splits() {
        assert_eq!(tokenize("Lituya Bay, Alaska!"), ["lituya", "bay", "alaska"]);
        assert_eq!(tokenize("7'4\"(224 cm)"), ["7", "4", "224", "cm"]);
        assert_eq!(tokenize("Élan vital"), ["élan", "vital"]);
        assert!(tokenize("  ...  ").is_empty());
    }
}
