//! Corpus-level BLEU and chrF, an external scorer bridge, and paired
//! bootstrap significance testing.

pub mod bleu;
pub mod bootstrap;
pub mod chrf;
pub mod external;
pub mod tokenize;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{corpus_bleu, Bleu};
pub use bootstrap::{paired_bootstrap, paired_bootstrap_scores, SignificanceResult};
pub use chrf::{corpus_chrf, Chrf};
pub use external::{external_score, ScorerClient};
pub use tokenize::{tokenize, TokenScheme};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("cannot score an empty corpus")]
    EmptyCorpus,
    #[error("segment {index} has an empty reference")]
    EmptyReference { index: usize },
    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("invalid bootstrap parameters: {0}")]
    InvalidParameters(String),
    #[error("scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("scorer protocol violation: {reason}: {line:?}")]
    ProtocolViolation { reason: String, line: String },
    #[error("scorer rejected the batch: {0}")]
    ScorerRejected(String),
    #[error("unknown metric `{0}` (expected bleu, chrf or external)")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    pub hypothesis: String,
    pub reference: String,
}

impl EvalPair {
    pub fn new(hypothesis: impl Into<String>, reference: impl Into<String>) -> Self {
        EvalPair { hypothesis: hypothesis.into(), reference: reference.into() }
    }

    /// Empty hypotheses are allowed; empty references are not.
    pub fn validate(&self) -> Result<(), MetricError> {
        self.validate_at(0)
    }

    fn validate_at(&self, index: usize) -> Result<(), MetricError> {
        if self.reference.trim().is_empty() {
            return Err(MetricError::EmptyReference { index });
        }
        Ok(())
    }
}

pub(crate) fn validate_pairs(pairs: &[EvalPair]) -> Result<(), MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    pairs.iter().enumerate().try_for_each(|(i, p)| p.validate_at(i))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Bleu,
    Chrf,
    External,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Bleu => "bleu",
            MetricKind::Chrf => "chrf",
            MetricKind::External => "external",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bleu" => Ok(MetricKind::Bleu),
            "chrf" => Ok(MetricKind::Chrf),
            "external" | "comet" => Ok(MetricKind::External),
            _ => Err(MetricError::UnknownMetric(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: MetricKind,
    pub corpus_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_scores: Option<Vec<f64>>,
    #[serde(default)]
    pub details: BTreeMap<String, f64>,
}

/// A corpus metric expressed through additive per-segment statistics, so a
/// resampled corpus can be scored without re-tokenizing.
pub trait CorpusMetric: Sync {
    type Stats: Clone + Default + Send + Sync;

    fn kind(&self) -> MetricKind;
    fn segment_stats(&self, hypothesis: &str, reference: &str) -> Self::Stats;
    fn accumulate(&self, acc: &mut Self::Stats, item: &Self::Stats);
    fn score(&self, stats: &Self::Stats) -> f64;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_reference_rejected() {
        let pairs = vec![EvalPair::new("a", "b"), EvalPair::new("a", "  ")];
        assert!(matches!(validate_pairs(&pairs), Err(MetricError::EmptyReference { index: 1 })));
        assert!(matches!(corpus_bleu(&pairs[1..], TokenScheme::Intl13a), Err(MetricError::EmptyReference { .. })));
        assert!(EvalPair::new("", "x").validate().is_ok());
    }

    #[test]
    fn kind_round_trip() {
        for k in [MetricKind::Bleu, MetricKind::Chrf, MetricKind::External] {
            assert_eq!(k.as_str().parse::<MetricKind>().unwrap(), k);
        }
        assert!("ter".parse::<MetricKind>().is_err());
    }
}
