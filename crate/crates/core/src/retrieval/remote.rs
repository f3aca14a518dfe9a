//! Client for an external retrieval service (e.g. a dense retriever).
//!
//! Request `{query, top_k}`, reply `{hits: [{passage_id, score}]}`. Passage
//! text is resolved against a locally loaded corpus; the reply is re-sorted
//! so the [`Retriever`] ordering contract holds regardless of the server.

use serde::{Deserialize, Serialize};

use super::{check_query, Corpus, RetrievalError, RetrievalHit, Retriever};
use crate::backends::http::JsonEndpoint;

#[derive(Serialize)]
struct Body<'a> {
    query: &'a str,
    top_k: usize,
}

#[derive(Deserialize)]
struct Reply {
    hits: Vec<ReplyHit>,
}

#[derive(Deserialize)]
struct ReplyHit {
    passage_id: String,
    score: f64,
}

pub struct HttpRetriever {
    endpoint: JsonEndpoint,
    corpus: Corpus,
}

impl HttpRetriever {
    pub fn new(url: impl Into<String>, api_key: Option<String>, corpus: Corpus) -> Self {
        Self {
            endpoint: JsonEndpoint::new(url, api_key),
            corpus,
        }
    }
}

impl Retriever for HttpRetriever {
    fn retrieve(&self, query: &str, top_k: usize) -> Result<Vec<RetrievalHit>, RetrievalError> {
        check_query(query, top_k)?;
        let reply: Reply = self
            .endpoint
            .post(&Body { query, top_k })
            .map_err(|e| RetrievalError::Remote(e.to_string()))?;
        let mut hits = Vec::with_capacity(reply.hits.len());
        for h in reply.hits {
            if self.corpus.get(&h.passage_id).is_none() {
                return Err(RetrievalError::UnknownPassage { id: h.passage_id });
            }
            if !(h.score >= 0.0) {
                return Err(RetrievalError::Remote(format!("negative score for {}", h.passage_id)));
            }
            if hits.iter().any(|(id, _): &(String, f64)| *id == h.passage_id) {
                continue;
            }
            hits.push((h.passage_id, h.score));
        }
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(hits
            .into_iter()
            .take(top_k)
            .enumerate()
            .map(|(i, (passage_id, score))| RetrievalHit {
                passage_id,
                score,
                rank: i + 1,
            })
            .collect())
    }

    fn corpus(&self) -> &Corpus {
        &self.corpus
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::http::testserver::CannedServer;
    use crate::retrieval::Passage;

    #[test]
    fn reorders_and_validates_hits() {
        let corpus = Corpus::from_passages(vec![
            Passage::new("a", "", "x"),
            Passage::new("b", "", "y"),
            Passage::new("c", "", "z"),
        ])
        .unwrap();
        let srv = CannedServer::start(vec![
            (200, r#"{"hits":[{"passage_id":"c","score":0.5},{"passage_id":"b","score":0.9},{"passage_id":"a","score":0.5}]}"#.into()),
            (200, r#"{"hits":[{"passage_id":"nope","score":0.5}]}"#.into()),
        ]);
        let r = HttpRetriever::new(&srv.url, None, corpus);
        let hits = r.retrieve("q", 2).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.passage_id.as_str()).collect();
        assert_eq!(ids, ["b", "a"]);
        assert_eq!(hits[1].rank, 2);
        assert!(matches!(r.retrieve("q", 2), Err(RetrievalError::UnknownPassage { .. })));
        let bodies = srv.join();
        assert_eq!(bodies[0], r#"{"query":"q","top_k":2}"#);
    }
}
