//! Generator and entailment-scorer interfaces.
//!
//! A [`Generator`] plays either the base model that samples candidate answers or
//! the adapted model that answers with citations. An [`NliScorer`] judges whether
//! a premise supports a hypothesis sentence. Both have HTTP clients ([`http`])
//! and deterministic doubles ([`mock`]) for tests and offline runs.

pub mod http;
pub mod mock;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpGenerator, HttpScorer, RetryPolicy};
pub use mock::{OracleScorer, ScriptItem, ScriptedGenerator};

/// Sampling defaults used when building training data.
pub const DATAGEN_TEMPERATURE: f64 = 0.5;
pub const DATAGEN_SAMPLES: usize = 4;
/// Decoding defaults used at inference and evaluation time.
pub const EVAL_TEMPERATURE: f64 = 0.25;
pub const DEFAULT_TOP_P: f64 = 0.95;
pub const DEFAULT_MAX_TOKENS: usize = 512;

#[derive(Debug, Error)]
pub enum BackendError {
    /// Connection-level failure; retried by remote clients.
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// A scripted double ran out of outputs.
    #[error("test script: {0}")]
    Script(String),
    #[error("batch element {index}: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<BackendError>,
    },
}

impl BackendError {
    pub fn is_transport(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Batch { source, .. } => source.is_transport(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub top_p: f64,
    pub num_samples: usize,
    pub max_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, temperature: f64, num_samples: usize) -> Self {
        Self {
            prompt: prompt.into(),
            temperature,
            top_p: DEFAULT_TOP_P,
            num_samples,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.num_samples == 0 {
            return Err(BackendError::Precondition("num_samples must be at least 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(BackendError::Precondition("temperature must be non-negative".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::Precondition("top_p must lie in (0, 1]".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::Precondition("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Token counts for one backend call. `estimated` marks counts derived from
/// [`estimate_tokens`] rather than reported by the backend.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub estimated: bool,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn add(&mut self, other: &Usage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.estimated |= other.estimated;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub texts: Vec<String>,
    pub usage: Usage,
}

/// `ceil(chars / 4)`: the fallback token estimate when a backend reports none.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

pub trait Generator: Send + Sync {
    /// Backend-specific completion; callers go through [`Generator::generate`].
    fn complete(&self, req: &GenerationRequest) -> Result<GenerationResult, BackendError>;

    /// Validates the request, calls the backend, and enforces the
    /// one-text-per-sample contract on the reply.
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        req.validate()?;
        let result = self.complete(req)?;
        if result.texts.len() != req.num_samples {
            return Err(BackendError::Protocol(format!(
                "requested {} samples, backend returned {}",
                req.num_samples,
                result.texts.len()
            )));
        }
        Ok(result)
    }
}

/// An entailment probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NliScore(f64);

impl NliScore {
    pub fn new(value: f64) -> Result<Self, BackendError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(BackendError::Protocol(format!("score {value} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub trait NliScorer: Send + Sync {
    /// Backend-specific scoring; callers go through [`NliScorer::score`].
    fn raw_score(&self, premise: &str, hypothesis: &str) -> Result<f64, BackendError>;

    fn score(&self, premise: &str, hypothesis: &str) -> Result<NliScore, BackendError> {
        if premise.trim().is_empty() {
            return Err(BackendError::Precondition("empty premise".into()));
        }
        if hypothesis.trim().is_empty() {
            return Err(BackendError::Precondition("empty hypothesis".into()));
        }
        NliScore::new(self.raw_score(premise, hypothesis)?)
    }

    /// Element-wise [`NliScorer::score`]; the first failure aborts the batch
    /// and reports its position.
    fn score_batch(&self, pairs: &[(String, String)]) -> Result<Vec<NliScore>, BackendError> {
        pairs
            .iter()
            .enumerate()
            .map(|(index, (p, h))| {
                self.score(p, h).map_err(|e| BackendError::Batch {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

/// Counts calls and estimated tokens flowing through a scorer.
pub struct MeteredScorer<'a> {
    inner: &'a dyn NliScorer,
    calls: AtomicU64,
    tokens: AtomicU64,
}

impl<'a> MeteredScorer<'a> {
    pub fn new(inner: &'a dyn NliScorer) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
            tokens: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn tokens(&self) -> u64 {
        self.tokens.load(Ordering::Relaxed)
    }
}

impl NliScorer for MeteredScorer<'_> {
    fn raw_score(&self, premise: &str, hypothesis: &str) -> Result<f64, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.tokens
            .fetch_add(estimate_tokens(premise) + estimate_tokens(hypothesis), Ordering::Relaxed);
        self.inner.raw_score(premise, hypothesis)
    }
}
