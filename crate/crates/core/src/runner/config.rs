use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunnerError;
use crate::llmclient::EndpointConfig;
use crate::metrics::bootstrap::BootstrapParams;
use crate::metrics::{MetricKind, TokenScheme};
use crate::prompt::{AlignedDemo, Strategy};
use crate::select::{SelectionMethod, SelectionSpec, Similarity};

fn default_strategy() -> Strategy {
    Strategy::Tsp
}
fn default_true() -> bool {
    true
}
fn default_runs() -> usize {
    1
}
fn default_metrics() -> Vec<MetricKind> {
    vec![MetricKind::Bleu, MetricKind::Chrf]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub method: SelectionMethod,
    pub k: usize,
    /// Falls back to the experiment seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub similarity: Similarity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetConfig {
    pub size: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerCommand {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizeSetting {
    /// Chinese character tokenization for Chinese targets, 13a otherwise.
    #[default]
    Auto,
    Intl13a,
    CjkChar,
}

impl TokenizeSetting {
    pub fn scheme(self, tgt_lang: &str) -> TokenScheme {
        match self {
            TokenizeSetting::Auto => TokenScheme::for_language(tgt_lang),
            TokenizeSetting::Intl13a => TokenScheme::Intl13a,
            TokenizeSetting::CjkChar => TokenScheme::CjkChar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignificanceConfig {
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    #[serde(default = "default_sample_ratio")]
    pub sample_ratio: f64,
    /// Falls back to the experiment seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_resamples() -> usize {
    crate::metrics::bootstrap::DEFAULT_RESAMPLES
}
fn default_sample_ratio() -> f64 {
    crate::metrics::bootstrap::DEFAULT_SAMPLE_RATIO
}

impl Default for SignificanceConfig {
    fn default() -> Self {
        SignificanceConfig { resamples: default_resamples(), sample_ratio: default_sample_ratio(), seed: None }
    }
}

/// Everything needed to replay one experiment. Relative paths resolve
/// against the directory of the file the config was loaded from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub manifest: PathBuf,
    /// Test corpus name in the manifest.
    pub corpus: String,
    /// Demonstration pool for few-shot prompting.
    #[serde(default)]
    pub dev_corpus: Option<String>,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    /// Overrides the corpus domain for domain-aware strategies.
    #[serde(default)]
    pub domain: Option<String>,
    /// Domains to pick the wrong one from; defaults to the manifest's.
    #[serde(default)]
    pub domain_set: Option<Vec<String>>,
    #[serde(default = "default_true")]
    pub with_task_system: bool,
    #[serde(default)]
    pub cot_demo: Option<AlignedDemo>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Holds temperature to [0, 1] and random few-shot selection to three
    /// runs, the standard protocol.
    #[serde(default = "default_true")]
    pub strict: bool,
    #[serde(default)]
    pub allow_wide_temperature: bool,
    #[serde(default)]
    pub selection: Option<SelectionConfig>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricKind>,
    #[serde(default)]
    pub tokenize: TokenizeSetting,
    #[serde(default)]
    pub scrub_catalog: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub subset: Option<SubsetConfig>,
    /// Journal (or run directory) of the system to test significance against.
    #[serde(default)]
    pub baseline: Option<PathBuf>,
    #[serde(default)]
    pub significance: SignificanceConfig,
    #[serde(default)]
    pub endpoint: EndpointConfig,
    #[serde(default)]
    pub external_scorer: Option<ScorerCommand>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<ExperimentConfig, RunnerError> {
        let mut config: ExperimentConfig =
            toml::from_str(text).map_err(|e| RunnerError::Config(format!("{}: {e}", base_dir.display())))?;
        config.base_dir = base_dir.to_path_buf();
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig, RunnerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunnerError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        ExperimentConfig::parse(&text, &base).map_err(|e| match e {
            RunnerError::Config(m) => RunnerError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn cache_path(&self) -> PathBuf {
        match &self.endpoint.cache_dir {
            Some(dir) => self.resolve(dir),
            None => self.output_path().join("cache"),
        }
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("{}-{}", self.corpus, self.strategy))
    }

    /// SHA-256 of the parsed configuration. Key order and formatting of the
    /// source file do not matter, and neither do settings that cannot change
    /// any output: where files go, parallelism, timeouts and retry pacing.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        let root = value.as_object_mut().expect("struct serializes to an object");
        root.remove("output_dir");
        if let Some(endpoint) = root.get_mut("endpoint").and_then(|e| e.as_object_mut()) {
            for key in ["cache_dir", "concurrency", "timeout_ms", "max_attempts", "backoff_base_ms", "backoff_cap_ms"] {
                endpoint.remove(key);
            }
            if let Some(mock) = endpoint.get_mut("mock").and_then(|m| m.as_object_mut()) {
                mock.remove("latency_ms");
            }
        }
        let canonical = serde_json::to_vec(&value).expect("value serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn selection_spec(&self) -> Option<SelectionSpec> {
        self.selection.as_ref().map(|s| SelectionSpec {
            method: s.method,
            k: s.k,
            seed: s.seed.unwrap_or(self.seed),
            similarity: s.similarity,
        })
    }

    pub fn bootstrap_params(&self) -> BootstrapParams {
        BootstrapParams {
            resamples: self.significance.resamples,
            sample_ratio: self.significance.sample_ratio,
            seed: self.significance.seed.unwrap_or(self.seed),
        }
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let bad = |m: String| Err(RunnerError::Config(m));
        let max_t = if self.allow_wide_temperature {
            2.0
        } else if self.strict {
            1.0
        } else {
            2.0
        };
        if !(0.0..=max_t).contains(&self.temperature) {
            return bad(format!(
                "temperature {} outside [0, {max_t}]{}",
                self.temperature,
                if max_t < 2.0 { "; set allow_wide_temperature to go higher" } else { "" }
            ));
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.metrics.is_empty() {
            return bad("no metrics configured".into());
        }
        if self.metrics.contains(&MetricKind::External) && self.external_scorer.is_none() {
            return bad("metric `external` needs an [external_scorer] command".into());
        }
        match (&self.selection, self.strategy) {
            (None, Strategy::FewShot) => return bad("strategy few_shot needs a [selection] table".into()),
            (Some(_), s) if s != Strategy::FewShot => {
                return bad(format!("[selection] only applies to few_shot, not {s}"));
            }
            (Some(sel), _) => {
                if sel.k == 0 {
                    return bad("selection.k must be at least 1".into());
                }
                if self.dev_corpus.is_none() {
                    return bad("few_shot needs dev_corpus as the demonstration pool".into());
                }
                if self.strict && sel.method == SelectionMethod::Random && self.runs != 3 {
                    return bad(format!(
                        "random selection uses 3 runs in strict mode, got runs = {}",
                        self.runs
                    ));
                }
            }
            (None, _) => {}
        }
        if self.strategy == Strategy::OneShotCot && self.cot_demo.is_none() {
            return bad("strategy one_shot_cot needs a cot_demo".into());
        }
        if let Some(sub) = &self.subset {
            if sub.size == 0 {
                return bad("subset.size must be at least 1".into());
            }
        }
        let sig = &self.significance;
        if sig.resamples == 0 || !(sig.sample_ratio > 0.0 && sig.sample_ratio <= 1.0) {
            return bad("significance needs resamples >= 1 and 0 < sample_ratio <= 1".into());
        }
        self.endpoint.validate().map_err(|e| RunnerError::Config(e.to_string()))?;
        if self.endpoint.model.trim().is_empty() {
            return bad("endpoint.model is empty".into());
        }
        Ok(())
    }
}
