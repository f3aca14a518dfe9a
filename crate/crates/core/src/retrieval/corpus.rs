use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RetrievalError;

/// One unit of the searchable corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

impl Passage {
    pub fn new(id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            text: text.into(),
        }
    }

    /// The `Title\nText` form used as an entailment premise.
    pub fn premise(&self) -> String {
        format!("{}\n{}", self.title, self.text)
    }
}

/// An ordered passage collection with an id lookup table.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    passages: Vec<Passage>,
    id_index: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_passages(passages: Vec<Passage>) -> Result<Self, RetrievalError> {
        let mut id_index = HashMap::with_capacity(passages.len());
        for (pos, p) in passages.iter().enumerate() {
            if p.text.trim().is_empty() {
                return Err(RetrievalError::EmptyText { id: p.id.clone() });
            }
            if id_index.insert(p.id.clone(), pos).is_some() {
                return Err(RetrievalError::DuplicateId { id: p.id.clone() });
            }
        }
        Ok(Self { passages, id_index })
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.id_index.get(id).map(|&pos| &self.passages[pos])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.id_index.get(id).copied()
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    /// Resolves ids to passages, failing on the first unknown id.
    pub fn resolve<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<&Passage>, RetrievalError> {
        ids.iter()
            .map(|id| {
                self.get(id.as_ref())
                    .ok_or_else(|| RetrievalError::UnknownPassage { id: id.as_ref().to_string() })
            })
            .collect()
    }
}

/// Reads a JSONL corpus: one `{"id", "title"?, "text"}` object per line.
///
/// Blank lines are skipped. Line numbers in errors are 1-based.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, RetrievalError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| RetrievalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut passages = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| RetrievalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let passage: Passage = serde_json::from_str(&line).map_err(|e| RetrievalError::MalformedLine {
            line: line_no,
            message: e.to_string(),
        })?;
        if passage.text.trim().is_empty() {
            return Err(RetrievalError::MalformedLine {
                line: line_no,
                message: format!("passage {:?} has empty text", passage.id),
            });
        }
        if let Some(first) = seen.insert(passage.id.clone(), line_no) {
            return Err(RetrievalError::DuplicateIdAt {
                id: passage.id,
                first_line: first,
                line: line_no,
            });
        }
        passages.push(passage);
    }
    Corpus::from_passages(passages)
}
