//! Run configuration, read from TOML.
//!
//! Every field has a default, so an empty file is a valid configuration.
//! Relative paths are resolved against the directory holding the file.
//! Credentials are never stored; a backend names the environment variable
//! that holds its key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    BackendError, Generator, HttpGenerator, HttpScorer, NliScorer, OracleScorer, ScriptedGenerator, DATAGEN_SAMPLES,
    DATAGEN_TEMPERATURE, DEFAULT_MAX_TOKENS, DEFAULT_TOP_P, EVAL_TEMPERATURE,
};
use crate::datagen::DatagenParams;
use crate::eval::ENTAIL_THRESHOLD;
use crate::grounding::{Thresholds, LINK_THRESHOLD, SUPPORT_THRESHOLD};
use crate::retrieval::remote::HttpRetriever;
use crate::retrieval::{load_corpus, Bm25Index, RetrievalError, Retriever};
use crate::tta::TtaParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("environment variable {0} is not set")]
    MissingEnv(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    /// Replays a JSON script; see [`ScriptedGenerator::from_file`].
    #[default]
    Script,
    Http,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    /// Rule-based substring entailment plus optional override table.
    #[default]
    Oracle,
    Http,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrieverKind {
    #[default]
    Bm25,
    Http,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overrides: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieverConfig {
    pub kind: RetrieverKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub link: f64,
    pub support: f64,
    pub entail: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            link: LINK_THRESHOLD,
            support: SUPPORT_THRESHOLD,
            entail: ENTAIL_THRESHOLD,
        }
    }
}

impl ThresholdConfig {
    pub fn grounding(&self) -> Thresholds {
        Thresholds {
            link: self.link,
            support: self.support,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub datagen_temperature: f64,
    pub n_samples: usize,
    pub eval_temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            datagen_temperature: DATAGEN_TEMPERATURE,
            n_samples: DATAGEN_SAMPLES,
            eval_temperature: EVAL_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TtaConfig {
    pub k: usize,
    pub budget: usize,
}

impl Default for TtaConfig {
    fn default() -> Self {
        Self { k: 5, budget: 4 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub generator: GeneratorConfig,
    pub scorer: ScorerConfig,
    pub retriever: RetrieverConfig,
    pub thresholds: ThresholdConfig,
    pub sampling: SamplingConfig,
    pub tta: TtaConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 1,
            generator: GeneratorConfig::default(),
            scorer: ScorerConfig::default(),
            retriever: RetrieverConfig::default(),
            thresholds: ThresholdConfig::default(),
            sampling: SamplingConfig::default(),
            tta: TtaConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

fn api_key(var: &Option<String>) -> Result<Option<String>, ConfigError> {
    match var {
        None => Ok(None),
        Some(name) => std::env::var(name).map(Some).map_err(|_| ConfigError::MissingEnv(name.clone())),
    }
}

fn require<'a>(value: &'a Option<String>, what: &str) -> Result<&'a str, ConfigError> {
    value
        .as_deref()
        .ok_or_else(|| ConfigError::Invalid(format!("{what} is required")))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: "<inline>".into(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        rebase(base, &mut config.generator.script);
        rebase(base, &mut config.scorer.overrides);
        rebase(base, &mut config.paths.corpus);
        rebase(base, &mut config.paths.index);
        config.validate()?;
        Ok(config)
    }

    /// Checks ranges, including `0 <= support <= entail <= link <= 1`.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.thresholds;
        if !(0.0 <= t.support && t.support <= t.entail && t.entail <= t.link && t.link <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "thresholds must satisfy 0 <= support <= entail <= link <= 1 (got support {}, entail {}, link {})",
                t.support, t.entail, t.link
            )));
        }
        let s = &self.sampling;
        for (name, v) in [("datagen_temperature", s.datagen_temperature), ("eval_temperature", s.eval_temperature)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be a non-negative number")));
            }
        }
        if !(s.top_p > 0.0 && s.top_p <= 1.0) {
            return Err(ConfigError::Invalid("top_p must be in (0, 1]".into()));
        }
        if s.n_samples == 0 || s.max_tokens == 0 {
            return Err(ConfigError::Invalid("n_samples and max_tokens must be positive".into()));
        }
        if self.tta.k == 0 || self.tta.budget == 0 {
            return Err(ConfigError::Invalid("tta.k and tta.budget must be positive".into()));
        }
        if self.jobs == 0 {
            return Err(ConfigError::Invalid("jobs must be positive".into()));
        }
        Ok(())
    }

    pub fn tta_params(&self) -> TtaParams {
        TtaParams {
            k: self.tta.k,
            budget: self.tta.budget,
            temperature: self.sampling.eval_temperature,
            top_p: self.sampling.top_p,
            max_tokens: self.sampling.max_tokens,
            seed: Some(self.seed),
            ..TtaParams::default()
        }
    }

    pub fn datagen_params(&self) -> DatagenParams {
        DatagenParams {
            k: self.tta.k,
            n_samples: self.sampling.n_samples,
            temperature: self.sampling.datagen_temperature,
            top_p: self.sampling.top_p,
            max_tokens: self.sampling.max_tokens,
            thresholds: self.thresholds.grounding(),
            seed: Some(self.seed),
            jobs: self.jobs,
            ..DatagenParams::default()
        }
    }

    pub fn build_generator(&self) -> Result<Box<dyn Generator>, ConfigError> {
        let g = &self.generator;
        match g.kind {
            GeneratorKind::Script => {
                let path = g
                    .script
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("generator.script is required for kind = \"script\"".into()))?;
                Ok(Box::new(ScriptedGenerator::from_file(path)?))
            }
            GeneratorKind::Http => Ok(Box::new(
                HttpGenerator::new(require(&g.url, "generator.url")?, api_key(&g.api_key_env)?)
                    .with_max_in_flight(self.jobs),
            )),
        }
    }

    pub fn build_scorer(&self) -> Result<Box<dyn NliScorer>, ConfigError> {
        let s = &self.scorer;
        match s.kind {
            ScorerKind::Oracle => {
                let scorer = OracleScorer::new();
                Ok(Box::new(match &s.overrides {
                    Some(p) => scorer.load_overrides(p)?,
                    None => scorer,
                }))
            }
            ScorerKind::Http => Ok(Box::new(
                HttpScorer::new(require(&s.url, "scorer.url")?, api_key(&s.api_key_env)?).with_max_in_flight(self.jobs),
            )),
        }
    }

    /// The BM25 index from `paths.index`, or a remote retriever whose passage
    /// ids resolve against `paths.corpus`.
    pub fn build_retriever(&self) -> Result<Box<dyn Retriever>, ConfigError> {
        match self.retriever.kind {
            RetrieverKind::Bm25 => {
                let dir = self
                    .paths
                    .index
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("paths.index is required".into()))?;
                Ok(Box::new(Bm25Index::load(dir)?))
            }
            RetrieverKind::Http => {
                let corpus_path = self
                    .paths
                    .corpus
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("paths.corpus is required for a remote retriever".into()))?;
                let corpus = load_corpus(corpus_path)?;
                Ok(Box::new(HttpRetriever::new(
                    require(&self.retriever.url, "retriever.url")?,
                    api_key(&self.retriever.api_key_env)?,
                    corpus,
                )))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.thresholds.link, 0.7);
        assert_eq!(c.thresholds.support, 0.5);
        assert_eq!(c.thresholds.entail, 0.5);
        assert_eq!(c.sampling.datagen_temperature, 0.5);
        assert_eq!(c.sampling.n_samples, 4);
        assert_eq!(c.sampling.eval_temperature, 0.25);
        assert_eq!(c.sampling.top_p, 0.95);
        assert_eq!((c.tta.k, c.tta.budget), (5, 4));
        assert_eq!(c.jobs, 1);
    }

    #[test]
    fn rejects_misordered_thresholds() {
        let err = RunConfig::from_toml("[thresholds]\nsupport = 0.6\nentail = 0.5\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
        assert!(RunConfig::from_toml("[thresholds]\nlink = 1.2\n").is_err());
        assert!(RunConfig::from_toml("[thresholds]\nlink = 0.5\nentail = 0.5\nsupport = 0.5\n").is_ok());
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(matches!(RunConfig::from_toml("[tta]\nbudgett = 3\n"), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[paths]\ncorpus = \"data/corpus.jsonl\"\nindex = \"/abs/idx\"\n").unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.paths.corpus.unwrap(), dir.path().join("data/corpus.jsonl"));
        assert_eq!(c.paths.index.unwrap(), PathBuf::from("/abs/idx"));
    }

    #[test]
    fn params_follow_config() {
        let c = RunConfig::from_toml("seed = 9\n[tta]\nbudget = 2\n[sampling]\nn_samples = 3\n").unwrap();
        assert_eq!(c.tta_params().budget, 2);
        assert_eq!(c.tta_params().seed, Some(9));
        assert_eq!(c.datagen_params().n_samples, 3);
        assert_eq!(c.datagen_params().seed, Some(9));
    }

    #[test]
    fn missing_backend_settings_are_reported() {
        let c = RunConfig::default();
        assert!(matches!(c.build_generator(), Err(ConfigError::Invalid(_))));
        assert!(matches!(c.build_retriever(), Err(ConfigError::Invalid(_))));
        assert!(c.build_scorer().is_ok());
        let c = RunConfig::from_toml("[generator]\nkind = \"http\"\nurl = \"http://x\"\napi_key_env = \"GROUNDCITE_TEST_UNSET_KEY\"\n").unwrap();
        assert!(matches!(c.build_generator(), Err(ConfigError::MissingEnv(_))));
    }
}
