//! JSON-over-HTTP backend clients.
//!
//! Generator: `POST {prompt, temperature, top_p, n, max_tokens, seed?}` answered
//! by `{texts: [...], prompt_tokens?, completion_tokens?}`.
//! Scorer: `POST {premise, hypothesis}` answered by `{score}`.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{estimate_tokens, BackendError, GenerationRequest, GenerationResult, Generator, NliScorer, Usage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

/// Caps concurrent requests on one client.
struct InFlight {
    active: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            active: Mutex::new(0),
            freed: Condvar::new(),
            limit: limit.max(1),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().unwrap();
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap();
        }
        *active += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// Shared transport: one endpoint, optional bearer key, retry and in-flight cap.
pub(crate) struct JsonEndpoint {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    retry: RetryPolicy,
    inflight: InFlight,
}

impl JsonEndpoint {
    pub(crate) fn new(url: impl Into<String>, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            url: url.into(),
            api_key,
            agent,
            retry: RetryPolicy::default(),
            inflight: InFlight::new(8),
        }
    }

    /// Posts `body` and decodes the reply. The serialized payload is built once
    /// and resent unchanged on every attempt.
    pub(crate) fn post<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R, BackendError> {
        let payload = serde_json::to_string(body).map_err(|e| BackendError::Protocol(e.to_string()))?;
        let _slot = self.inflight.acquire();
        let attempts = self.retry.attempts.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.retry.initial_backoff * 2u32.pow(attempt - 1));
            }
            match self.post_once(&payload) {
                Err(e) if e.is_transport() => {
                    log::warn!("{} attempt {} failed: {e}", self.url, attempt + 1);
                    last = Some(e);
                }
                other => return other,
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn post_once<R: DeserializeOwned>(&self, payload: &str) -> Result<R, BackendError> {
        let mut req = self.agent.post(&self.url).header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send(payload).map_err(transport_or_protocol)?;
        let status = resp.status().as_u16();
        if status >= 500 {
            return Err(BackendError::Transport(format!("{} returned HTTP {status}", self.url)));
        }
        if status >= 400 {
            return Err(BackendError::Protocol(format!("{} returned HTTP {status}", self.url)));
        }
        resp.body_mut()
            .read_json::<R>()
            .map_err(|e| BackendError::Protocol(format!("malformed reply from {}: {e}", self.url)))
    }
}

fn transport_or_protocol(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Io(_)
        | ureq::Error::Timeout(_)
        | ureq::Error::HostNotFound
        | ureq::Error::ConnectionFailed => BackendError::Transport(e.to_string()),
        other => BackendError::Protocol(other.to_string()),
    }
}

#[derive(Serialize)]
struct GenerateBody<'a> {
    prompt: &'a str,
    temperature: f64,
    top_p: f64,
    n: usize,
    max_tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct GenerateReply {
    texts: Vec<String>,
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

pub struct HttpGenerator {
    endpoint: JsonEndpoint,
}

impl HttpGenerator {
    pub fn new(url: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            endpoint: JsonEndpoint::new(url, api_key),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.endpoint.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.endpoint.inflight = InFlight::new(limit);
        self
    }
}

impl Generator for HttpGenerator {
    fn complete(&self, req: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        let reply: GenerateReply = self.endpoint.post(&GenerateBody {
            prompt: &req.prompt,
            temperature: req.temperature,
            top_p: req.top_p,
            n: req.num_samples,
            max_tokens: req.max_tokens,
            seed: req.seed,
        })?;
        let usage = match (reply.prompt_tokens, reply.completion_tokens) {
            (Some(p), Some(c)) => Usage {
                prompt_tokens: p,
                completion_tokens: c,
                estimated: false,
            },
            _ => Usage {
                prompt_tokens: estimate_tokens(&req.prompt),
                completion_tokens: reply.texts.iter().map(|t| estimate_tokens(t)).sum(),
                estimated: true,
            },
        };
        Ok(GenerationResult {
            texts: reply.texts,
            usage,
        })
    }
}

#[derive(Serialize)]
struct ScoreBody<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Deserialize)]
struct ScoreReply {
    score: f64,
}

pub struct HttpScorer {
    endpoint: JsonEndpoint,
}

impl HttpScorer {
    pub fn new(url: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            endpoint: JsonEndpoint::new(url, api_key),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.endpoint.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.endpoint.inflight = InFlight::new(limit);
        self
    }
}

impl NliScorer for HttpScorer {
    fn raw_score(&self, premise: &str, hypothesis: &str) -> Result<f64, BackendError> {
        let reply: ScoreReply = self.endpoint.post(&ScoreBody { premise, hypothesis })?;
        Ok(reply.score)
    }
}

#[cfg(test)]
pub(crate) mod testserver {
    //! A minimal single-threaded HTTP/1.1 server replaying canned responses.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};
    use std::thread::JoinHandle;

    pub struct CannedServer {
        pub url: String,
        pub bodies: Arc<Mutex<Vec<String>>>,
        handle: Option<JoinHandle<()>>,
    }

    impl CannedServer {
        /// Serves one connection per `(status, body)` pair, then exits.
        pub fn start(responses: Vec<(u16, String)>) -> Self {
            let listener = TcpListener::bind("127.0.0.1:0").unwrap();
            let url = format!("http://{}/", listener.local_addr().unwrap());
            let bodies = Arc::new(Mutex::new(Vec::new()));
            let seen = bodies.clone();
            let handle = std::thread::spawn(move || {
                for (status, body) in responses {
                    let (mut stream, _) = listener.accept().unwrap();
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut len = 0usize;
                    loop {
                        let mut line = String::new();
                        reader.read_line(&mut line).unwrap();
                        let l = line.trim_end();
                        if l.is_empty() {
                            break;
                        }
                        if let Some((k, v)) = l.split_once(':') {
                            if k.eq_ignore_ascii_case("content-length") {
                                len = v.trim().parse().unwrap();
                            }
                        }
                    }
                    let mut buf = vec![0; len];
                    reader.read_exact(&mut buf).unwrap();
                    seen.lock().unwrap().push(String::from_utf8(buf).unwrap());
                    let resp = format!(
                        "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                        body.len()
                    );
                    stream.write_all(resp.as_bytes()).unwrap();
                }
            });
            Self {
                url,
                bodies,
                handle: Some(handle),
            }
        }

        pub fn join(mut self) -> Vec<String> {
            self.handle.take().unwrap().join().unwrap();
            self.bodies.lock().unwrap().clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testserver::CannedServer;
    use super::*;

    fn fast() -> RetryPolicy {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_millis(1),
        }
    }

    #[test]
    fn generator_roundtrip_with_usage() {
        let srv = CannedServer::start(vec![(
            200,
            r#"{"texts":["a","b"],"prompt_tokens":7,"completion_tokens":3}"#.into(),
        )]);
        let g = HttpGenerator::new(&srv.url, None).with_retry(fast());
        let mut req = GenerationRequest::new("hello", 0.5, 2);
        req.seed = Some(9);
        let res = g.generate(&req).unwrap();
        assert_eq!(res.texts, ["a", "b"]);
        assert_eq!(res.usage, Usage { prompt_tokens: 7, completion_tokens: 3, estimated: false });
        let bodies = srv.join();
        let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent["n"], 2);
        assert_eq!(sent["prompt"], "hello");
        assert_eq!(sent["top_p"], 0.95);
        assert_eq!(sent["seed"], 9);
    }

    #[test]
    fn retries_server_errors_with_identical_payload() {
        let srv = CannedServer::start(vec![
            (503, "{}".into()),
            (503, "{}".into()),
            (200, r#"{"texts":["ok"]}"#.into()),
        ]);
        let g = HttpGenerator::new(&srv.url, Some("k".into())).with_retry(fast());
        let res = g.generate(&GenerationRequest::new("p", 0.25, 1)).unwrap();
        assert_eq!(res.texts, ["ok"]);
        assert!(res.usage.estimated);
        let bodies = srv.join();
        assert_eq!(bodies.len(), 3);
        assert!(bodies.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let srv = CannedServer::start(vec![(502, "{}".into()), (502, "{}".into()), (502, "{}".into())]);
        let g = HttpGenerator::new(&srv.url, None).with_retry(fast());
        let err = g.generate(&GenerationRequest::new("p", 0.25, 1)).unwrap_err();
        assert!(err.is_transport(), "{err}");
        assert_eq!(srv.join().len(), 3);
    }

    #[test]
    fn short_reply_and_garbage_are_protocol_errors() {
        let srv = CannedServer::start(vec![
            (200, r#"{"texts":["a","b","c"]}"#.into()),
            (200, "not json".into()),
        ]);
        let g = HttpGenerator::new(&srv.url, None).with_retry(fast());
        let err = g.generate(&GenerationRequest::new("p", 0.5, 4)).unwrap_err();
        assert!(matches!(err, BackendError::Protocol(_)));
        let err = g.generate(&GenerationRequest::new("p", 0.5, 1)).unwrap_err();
        assert!(matches!(err, BackendError::Protocol(_)));
        srv.join();
    }

    #[test]
    fn unreachable_is_transport() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        drop(listener);
        let g = HttpGenerator::new(url, None).with_retry(fast());
        assert!(g.generate(&GenerationRequest::new("p", 0.5, 1)).unwrap_err().is_transport());
    }

    #[test]
    fn scorer_roundtrip_and_range_check() {
        let srv = CannedServer::start(vec![(200, r#"{"score":0.8}"#.into()), (200, r#"{"score":1.5}"#.into())]);
        let s = HttpScorer::new(&srv.url, None).with_retry(fast());
        assert_eq!(s.score("prem", "hyp").unwrap().value(), 0.8);
        assert!(matches!(s.score("prem", "hyp"), Err(BackendError::Protocol(_))));
        let bodies = srv.join();
        let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent, serde_json::json!({"premise": "prem", "hypothesis": "hyp"}));
    }
}
