//! Run configuration: one TOML document, every experiment constant a
//! default, every default overridable, and the resolved values snapshotted
//! into the run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::CorpusFormat;
use crate::llm::ProviderConfig;
use crate::sandbox::SandboxPolicy;

use super::RunnerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub provider: ProviderConfig,
    pub train: TrainConfig,
    pub optimize: OptimizeConfig,
    #[serde(default)]
    pub sandbox: SandboxPolicy,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Corpus sampled for the existing half of the training set.
    pub existing_source: Option<PathBuf>,
    /// Corpus the mutation references are drawn from.
    pub mutation_source: Option<PathBuf>,
    /// Held-out corpus whose ids the training set must not touch.
    pub eval_corpus: Option<PathBuf>,
    /// K: tasks per source half.
    #[serde(default = "default_k_per_source")]
    pub k_per_source: usize,
    /// Total mutation attempts allowed; defaults to 3 × k_per_source.
    pub retry_budget: Option<usize>,
    #[serde(default = "default_format")]
    pub format: CorpusFormat,
    /// Pre-built training-set file; when set, sources are not consulted.
    pub training_set: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    /// Seed instruction given inline...
    pub initial_prompt: Option<String>,
    /// ...or as a file path; exactly one of the two.
    pub initial_prompt_file: Option<PathBuf>,
    /// Prompt variants per iteration.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_k_max")]
    pub k_max: u32,
    /// Consecutive equal top scores that trigger the early stop.
    #[serde(default = "default_window")]
    pub window: usize,
    /// Generated and recorded in the manifest when absent.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub run_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
}

fn default_k_per_source() -> usize {
    10
}

fn default_n() -> usize {
    10
}

fn default_k_max() -> u32 {
    10
}

fn default_window() -> usize {
    3
}

fn default_format() -> CorpusFormat {
    CorpusFormat::GenerationCorpus
}

impl RunConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, RunnerError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| {
            RunnerError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: RunConfig = toml::from_str(&raw)
            .map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let fail = |field: &str, reason: &str| {
            Err(RunnerError::Config(format!("{field}: {reason}")))
        };
        if self.optimize.n < 1 {
            return fail("optimize.n", "must be at least 1");
        }
        if self.optimize.k_max < 1 {
            return fail("optimize.k_max", "must be at least 1");
        }
        if self.optimize.window < 1 {
            return fail("optimize.window", "must be at least 1");
        }
        match (
            &self.optimize.initial_prompt,
            &self.optimize.initial_prompt_file,
        ) {
            (Some(_), Some(_)) => {
                return fail(
                    "optimize.initial_prompt",
                    "give either inline text or a file, not both",
                )
            }
            (None, None) => {
                return fail(
                    "optimize.initial_prompt",
                    "either inline text or initial_prompt_file is required",
                )
            }
            _ => {}
        }
        if self.train.training_set.is_none() {
            if self.train.existing_source.is_none() {
                return fail(
                    "train.existing_source",
                    "required unless train.training_set is set",
                );
            }
            if self.train.mutation_source.is_none() {
                return fail(
                    "train.mutation_source",
                    "required unless train.training_set is set",
                );
            }
        }
        if let Some(cache_dir) = &self.output.cache_dir {
            if cache_dir == &self.output.run_dir {
                return fail("output.cache_dir", "must differ from output.run_dir");
            }
        }
        self.provider
            .validate()
            .map_err(|e| RunnerError::Config(format!("provider: {e}")))?;
        self.sandbox
            .validate()
            .map_err(|e| RunnerError::Config(e.to_string()))?;
        Ok(())
    }

    /// Effective mutation retry budget.
    pub fn retry_budget(&self) -> usize {
        self.train
            .retry_budget
            .unwrap_or(3 * self.train.k_per_source)
    }

    /// Initial prompt text, reading the file variant if configured.
    pub fn initial_prompt_text(&self) -> Result<String, RunnerError> {
        if let Some(text) = &self.optimize.initial_prompt {
            return Ok(text.clone());
        }
        let path = self
            .optimize
            .initial_prompt_file
            .as_ref()
            .expect("validated: one of the two is set");
        std::fs::read_to_string(path)
            .map(|s| s.trim_end().to_string())
            .map_err(|e| {
                RunnerError::Config(format!(
                    "optimize.initial_prompt_file: cannot read {}: {e}",
                    path.display()
                ))
            })
    }

    /// Seed resolution order: CLI override, config, then fresh entropy.
    pub fn resolve_seed(&self, cli_seed: Option<u64>) -> u64 {
        cli_seed
            .or(self.optimize.seed)
            .unwrap_or_else(|| rand::random::<u64>())
    }
}
