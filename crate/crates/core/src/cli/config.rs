use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusConfig;
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, LatencyConfig};
use crate::model::ModelConfig;
use crate::recpo::TrainConfig;
use crate::sampler::SamplerConfig;

/// Everything a run needs, loaded from one JSON file. Missing sections and
/// keys take their defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run_name: String,
    /// Parent of the run directory.
    pub output_dir: PathBuf,
    /// Seeds world generation, initialization, batching and sampling.
    pub seed: u64,
    /// Serial execution and wall-clock-free logs for byte-exact reruns.
    pub strict: bool,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub latency: LatencyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_name: "run".into(),
            output_dir: PathBuf::from("runs"),
            seed: 0,
            strict: false,
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            sampler: SamplerConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            latency: LatencyConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses JSON, naming the offending key on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let key = if path.is_empty() || path == "." { "<root>".to_string() } else { path };
            Error::Config {
                key,
                reason: e.into_inner().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) {
            return Err(Error::config("run_name", "must be a non-empty plain name"));
        }
        self.corpus.validate()?;
        self.model.validate()?;
        self.sampler.validate(self.model.vocab_size)?;
        self.train.validate()?;
        self.eval.validate()?;
        self.latency.validate()?;
        let needed = self.corpus.max_prompt_tokens + self.sampler.reasoning_budget.max(self.eval.reasoning_budget);
        if needed > self.model.max_context {
            return Err(Error::config(
                "model.max_context",
                format!(
                    "{} is below corpus.max_prompt_tokens + reasoning budget = {needed}",
                    self.model.max_context
                ),
            ));
        }
        Ok(())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_name)
    }

    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::from_json(&c.to_pretty_json()).unwrap(), c);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_named() {
        match RunConfig::from_json(r#"{"train": {"learning_rat": 0.1}}"#) {
            Err(Error::Config { key, .. }) => assert!(key.starts_with("train"), "{key}"),
            other => panic!("{other:?}"),
        }
        match RunConfig::from_json(r#"{"sampler": {"top_k": "many"}}"#) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "sampler.top_k"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(RunConfig::from_json(r#"{"bogus": 1}"#), Err(Error::Config { .. })));
    }

    #[test]
    fn context_must_fit_prompt_and_budget() {
        let mut c = RunConfig::default();
        c.model.max_context = 100;
        match c.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "model.max_context"),
            other => panic!("{other:?}"),
        }
    }
}
