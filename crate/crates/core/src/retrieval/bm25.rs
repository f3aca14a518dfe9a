use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_query, tokenize, Corpus, Passage, RetrievalError, RetrievalHit, Retriever};

/// Version string written to `FORMAT_VERSION` in every index directory.
pub const INDEX_FORMAT_VERSION: &str = "groundcite-bm25/1";

const VERSION_FILE: &str = "FORMAT_VERSION";
const DATA_FILE: &str = "index.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    /// Term-frequency saturation.
    pub k1: f64,
    /// Length normalization.
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Serialize, Deserialize)]
struct IndexData {
    params: Bm25Params,
    passages: Vec<Passage>,
    doc_lengths: Vec<u32>,
    /// term -> (passage position, term frequency), positions ascending
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

/// Okapi BM25 over a fixed corpus.
///
/// Term weight is `idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))` with
/// `idf = ln(1 + (N - df + 0.5) / (df + 0.5))`, summed over the distinct query
/// terms. Passages that share no term with the query score zero and are still
/// returned (after all matching passages, by id) so a result list can be filled
/// up to `top_k`.
pub struct Bm25Index {
    params: Bm25Params,
    corpus: Corpus,
    doc_lengths: Vec<u32>,
    avg_len: f64,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    by_id: Vec<u32>,
}

impl Bm25Index {
    pub fn build(corpus: &Corpus, params: Bm25Params) -> Self {
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        for (pos, passage) in corpus.passages().iter().enumerate() {
            // titles are searchable alongside the body
            let tokens = tokenize(&format!("{} {}", passage.title, passage.text));
            doc_lengths.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((pos as u32, count));
            }
        }
        Self::assemble(params, corpus.clone(), doc_lengths, postings)
    }

    fn assemble(
        params: Bm25Params,
        corpus: Corpus,
        doc_lengths: Vec<u32>,
        postings: BTreeMap<String, Vec<(u32, u32)>>,
    ) -> Self {
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_len = if doc_lengths.is_empty() {
            0.0
        } else {
            total as f64 / doc_lengths.len() as f64
        };
        let mut by_id: Vec<u32> = (0..corpus.len() as u32).collect();
        by_id.sort_by(|&a, &b| {
            corpus.passages()[a as usize]
                .id
                .cmp(&corpus.passages()[b as usize].id)
        });
        Self {
            params,
            corpus,
            doc_lengths,
            avg_len,
            postings,
            by_id,
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    /// Writes the index directory. Output bytes depend only on corpus and params.
    pub fn save(&self, dir: impl AsRef<Path>, overwrite: bool) -> Result<(), RetrievalError> {
        let dir = dir.as_ref();
        let io = |source| RetrievalError::Io {
            path: dir.display().to_string(),
            source,
        };
        if !overwrite && (dir.join(VERSION_FILE).exists() || dir.join(DATA_FILE).exists()) {
            return Err(RetrievalError::IndexExists {
                path: dir.display().to_string(),
            });
        }
        fs::create_dir_all(dir).map_err(io)?;
        let data = IndexData {
            params: self.params,
            passages: self.corpus.passages().to_vec(),
            doc_lengths: self.doc_lengths.clone(),
            postings: self.postings.clone(),
        };
        let json = serde_json::to_vec(&data).map_err(|e| RetrievalError::Format(e.to_string()))?;
        write_atomic(&dir.join(DATA_FILE), &json).map_err(io)?;
        write_atomic(&dir.join(VERSION_FILE), format!("{INDEX_FORMAT_VERSION}\n").as_bytes())
            .map_err(io)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let dir = dir.as_ref();
        let io = |source| RetrievalError::Io {
            path: dir.display().to_string(),
            source,
        };
        let version = fs::read_to_string(dir.join(VERSION_FILE)).map_err(io)?;
        if version.trim() != INDEX_FORMAT_VERSION {
            return Err(RetrievalError::Format(format!(
                "unsupported index version {:?}, expected {INDEX_FORMAT_VERSION:?}",
                version.trim()
            )));
        }
        let bytes = fs::read(dir.join(DATA_FILE)).map_err(io)?;
        let data: IndexData =
            serde_json::from_slice(&bytes).map_err(|e| RetrievalError::Format(e.to_string()))?;
        if data.doc_lengths.len() != data.passages.len() {
            return Err(RetrievalError::Format("doc length table does not match passages".into()));
        }
        let corpus = Corpus::from_passages(data.passages)?;
        Ok(Self::assemble(data.params, corpus, data.doc_lengths, data.postings))
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.corpus.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }
}

impl Retriever for Bm25Index {
    fn retrieve(&self, query: &str, top_k: usize) -> Result<Vec<RetrievalHit>, RetrievalError> {
        check_query(query, top_k)?;
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let Bm25Params { k1, b } = self.params;
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in &terms {
            let Some(list) = self.postings.get(term) else { continue };
            let idf = self.idf(list.len());
            for &(doc, tf) in list {
                let tf = f64::from(tf);
                let dl = f64::from(self.doc_lengths[doc as usize]);
                let norm = 1.0 - b + b * dl / self.avg_len;
                *scores.entry(doc).or_insert(0.0) += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
            }
        }
        let passages = self.corpus.passages();
        let mut ranked: Vec<(u32, f64)> = scores.into_iter().collect();
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| passages[a.0 as usize].id.cmp(&passages[b.0 as usize].id))
        });
        if ranked.len() < top_k {
            let matched: BTreeSet<u32> = ranked.iter().map(|&(d, _)| d).collect();
            let fill = self
                .by_id
                .iter()
                .filter(|d| !matched.contains(d))
                .take(top_k - ranked.len())
                .map(|&d| (d, 0.0))
                .collect::<Vec<_>>();
            ranked.extend(fill);
        }
        Ok(ranked
            .into_iter()
            .take(top_k)
            .enumerate()
            .map(|(i, (doc, score))| RetrievalHit {
                passage_id: passages[doc as usize].id.clone(),
                score,
                rank: i + 1,
            })
            .collect())
    }

    fn corpus(&self) -> &Corpus {
        &self.corpus
    }
}

/// Writes through a `.tmp` sibling and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(items: &[(&str, &str, &str)]) -> Corpus {
        Corpus::from_passages(items.iter().map(|(i, t, x)| Passage::new(*i, *t, *x)).collect()).unwrap()
    }

    fn ids(hits: &[RetrievalHit]) -> Vec<&str> {
        hits.iter().map(|h| h.passage_id.as_str()).collect()
    }

    #[test]
    fn unique_term_ranks_first() {
        let c = corpus(&[
            ("a", "", "red green"),
            ("b", "", "green blue zebra"),
            ("c", "", "blue red"),
        ]);
        let idx = Bm25Index::build(&c, Bm25Params::default());
        let hits = idx.retrieve("zebra", 3).unwrap();
        assert_eq!(hits[0].passage_id, "b");
        assert!(hits[0].score > 0.0);
        assert_eq!(hits[1].score, 0.0);
        assert_eq!(idx.retrieve("zebra", 5).unwrap().len(), 3);
    }

    #[test]
    fn errors_on_bad_arguments() {
        let c = corpus(&[("a", "", "x")]);
        let idx = Bm25Index::build(&c, Bm25Params::default());
        assert!(matches!(idx.retrieve("  ", 1), Err(RetrievalError::EmptyQuery)));
        assert!(matches!(idx.retrieve("x", 0), Err(RetrievalError::ZeroTopK)));
    }

    #[test]
    fn equal_scores_order_by_id() {
        let c = corpus(&[("z", "", "same words"), ("m", "", "same words"), ("a", "", "same words")]);
        let idx = Bm25Index::build(&c, Bm25Params::default());
        assert_eq!(ids(&idx.retrieve("same", 3).unwrap()), ["a", "m", "z"]);
    }

    #[test]
    fn empty_corpus_returns_nothing() {
        let idx = Bm25Index::build(&Corpus::default(), Bm25Params::default());
        assert!(idx.retrieve("anything", 4).unwrap().is_empty());
    }

    #[test]
    fn save_load_roundtrip_and_overwrite_guard() {
        let c = corpus(&[("a", "T", "alpha beta"), ("b", "", "beta gamma")]);
        let idx = Bm25Index::build(&c, Bm25Params::default());
        let dir = tempfile::tempdir().unwrap();
        idx.save(dir.path(), false).unwrap();
        assert!(matches!(
            idx.save(dir.path(), false),
            Err(RetrievalError::IndexExists { .. })
        ));
        idx.save(dir.path(), true).unwrap();
        let loaded = Bm25Index::load(dir.path()).unwrap();
        assert_eq!(loaded.retrieve("beta", 2).unwrap(), idx.retrieve("beta", 2).unwrap());
        let version = fs::read_to_string(dir.path().join(VERSION_FILE)).unwrap();
        assert_eq!(version.trim(), INDEX_FORMAT_VERSION);
    }

    #[test]
    fn rejects_unknown_version() {
        let c = corpus(&[("a", "", "x")]);
        let dir = tempfile::tempdir().unwrap();
        Bm25Index::build(&c, Bm25Params::default()).save(dir.path(), false).unwrap();
        fs::write(dir.path().join(VERSION_FILE), "groundcite-bm25/0\n").unwrap();
        assert!(matches!(Bm25Index::load(dir.path()), Err(RetrievalError::Format(_))));
    }
}
