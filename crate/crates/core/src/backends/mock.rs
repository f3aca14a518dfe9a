//! Deterministic backend doubles.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{estimate_tokens, BackendError, GenerationRequest, GenerationResult, Generator, NliScorer, Usage};
use crate::markup::normalize;

/// One scripted generator output: a completion, or a simulated transport failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptItem {
    Text(String),
    Fail { fail: String },
}

impl From<&str> for ScriptItem {
    fn from(s: &str) -> Self {
        ScriptItem::Text(s.to_string())
    }
}

impl From<String> for ScriptItem {
    fn from(s: String) -> Self {
        ScriptItem::Text(s)
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct ScriptFile {
    #[serde(default)]
    sequence: Vec<ScriptItem>,
    #[serde(default)]
    rules: Vec<RuleFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RuleFile {
    #[serde(rename = "match")]
    needle: String,
    outputs: Vec<ScriptItem>,
}

struct Rule {
    needle: String,
    queue: Mutex<VecDeque<ScriptItem>>,
}

/// A generator that replays canned outputs.
///
/// A call whose prompt contains the needle of a rule consumes from that rule's
/// queue (first matching rule in declaration order); any other call consumes
/// from the shared sequence. Each sample consumes one item. Running out of
/// items is a [`BackendError::Script`] error.
pub struct ScriptedGenerator {
    sequence: Mutex<VecDeque<ScriptItem>>,
    rules: Vec<Rule>,
    calls: AtomicUsize,
}

impl ScriptedGenerator {
    pub fn new<I, T>(outputs: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: Into<ScriptItem>,
    {
        Self {
            sequence: Mutex::new(outputs.into_iter().map(Into::into).collect()),
            rules: Vec::new(),
            calls: AtomicUsize::new(0),
        }
    }

    /// Adds a per-prompt script selected by substring match.
    pub fn with_rule<I, T>(mut self, needle: impl Into<String>, outputs: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: Into<ScriptItem>,
    {
        self.rules.push(Rule {
            needle: needle.into(),
            queue: Mutex::new(outputs.into_iter().map(Into::into).collect()),
        });
        self
    }

    /// Loads `{"sequence": [...], "rules": [{"match": "...", "outputs": [...]}]}`.
    /// Output items are strings or `{"fail": "message"}`.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        let file: ScriptFile = serde_json::from_slice(&bytes)
            .map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        let mut g = Self::new(file.sequence);
        for rule in file.rules {
            g = g.with_rule(rule.needle, rule.outputs);
        }
        Ok(g)
    }

    /// Items left across the sequence and every rule.
    pub fn remaining(&self) -> usize {
        self.sequence.lock().unwrap().len()
            + self.rules.iter().map(|r| r.queue.lock().unwrap().len()).sum::<usize>()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Generator for ScriptedGenerator {
    fn complete(&self, req: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let (label, queue) = match self.rules.iter().find(|r| req.prompt.contains(&r.needle)) {
            Some(rule) => (format!("rule {:?}", rule.needle), &rule.queue),
            None => ("sequence".to_string(), &self.sequence),
        };
        let mut queue = queue.lock().unwrap();
        if queue.len() < req.num_samples {
            return Err(BackendError::Script(format!(
                "{label} exhausted: {} requested, {} left",
                req.num_samples,
                queue.len()
            )));
        }
        let mut texts = Vec::with_capacity(req.num_samples);
        for _ in 0..req.num_samples {
            match queue.pop_front().expect("length checked") {
                ScriptItem::Text(t) => texts.push(t),
                ScriptItem::Fail { fail } => return Err(BackendError::Transport(fail)),
            }
        }
        let usage = Usage {
            prompt_tokens: estimate_tokens(&req.prompt),
            completion_tokens: texts.iter().map(|t| estimate_tokens(t)).sum(),
            estimated: true,
        };
        Ok(GenerationResult { texts, usage })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct OverrideRecord {
    premise: String,
    hypothesis: String,
    score: f64,
}

/// Rule-based entailment double.
///
/// Scores 1.0 when the normalized hypothesis occurs as a contiguous run of
/// whole words in the normalized premise, otherwise 0.0. Normalization
/// lowercases, strips punctuation and collapses whitespace. An override table
/// keyed by normalized `(premise, hypothesis)` takes precedence.
#[derive(Default)]
pub struct OracleScorer {
    overrides: HashMap<(String, String), f64>,
    calls: AtomicUsize,
}

impl OracleScorer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_override(mut self, premise: &str, hypothesis: &str, score: f64) -> Self {
        self.set_override(premise, hypothesis, score);
        self
    }

    pub fn set_override(&mut self, premise: &str, hypothesis: &str, score: f64) {
        self.overrides.insert((normalize(premise), normalize(hypothesis)), score);
    }

    /// Loads overrides from JSONL records `{"premise", "hypothesis", "score"}`.
    pub fn load_overrides(mut self, path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: OverrideRecord = serde_json::from_str(line).map_err(|e| {
                BackendError::Script(format!("{} line {}: {e}", path.display(), i + 1))
            })?;
            self.set_override(&rec.premise, &rec.hypothesis, rec.score);
        }
        Ok(self)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl NliScorer for OracleScorer {
    fn raw_score(&self, premise: &str, hypothesis: &str) -> Result<f64, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let premise = normalize(premise);
        let hypothesis = normalize(hypothesis);
        if let Some(&v) = self.overrides.get(&(premise.clone(), hypothesis.clone())) {
            return Ok(v);
        }
        if hypothesis.is_empty() {
            return Ok(0.0);
        }
        let found = format!(" {premise} ").contains(&format!(" {hypothesis} "));
        Ok(if found { 1.0 } else { 0.0 })
    }
}
