use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusMetric, MetricError, MetricKind};

pub const DEFAULT_RESAMPLES: usize = 300;
pub const DEFAULT_SAMPLE_RATIO: f64 = 0.4;
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapParams {
    pub resamples: usize,
    pub sample_ratio: f64,
    pub seed: u64,
}

impl Default for BootstrapParams {
    fn default() -> Self {
        BootstrapParams { resamples: DEFAULT_RESAMPLES, sample_ratio: DEFAULT_SAMPLE_RATIO, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    /// Full-corpus score of system A minus that of system B.
    pub delta: f64,
    pub p_value: f64,
    pub significant: bool,
    pub resamples: usize,
}

/// Arithmetic mean of precomputed segment scores.
#[derive(Debug, Clone, Copy, Default)]
struct MeanScore;

impl MeanScore {
    fn stats(score: f64) -> (f64, u64) {
        (score, 1)
    }
}

impl CorpusMetric for MeanScore {
    type Stats = (f64, u64);

    fn kind(&self) -> MetricKind {
        MetricKind::External
    }

    /// Hypothesis is ignored; the reference slot carries the score as text.
    fn segment_stats(&self, _hypothesis: &str, reference: &str) -> (f64, u64) {
        Self::stats(reference.parse().unwrap_or(0.0))
    }

    fn accumulate(&self, acc: &mut (f64, u64), item: &(f64, u64)) {
        acc.0 += item.0;
        acc.1 += item.1;
    }

    fn score(&self, stats: &(f64, u64)) -> f64 {
        if stats.1 == 0 {
            0.0
        } else {
            stats.0 / stats.1 as f64
        }
    }
}

fn check(n: usize, params: &BootstrapParams) -> Result<(), MetricError> {
    if n < 2 {
        return Err(MetricError::InvalidParameters(format!("need at least 2 segments, got {n}")));
    }
    if params.resamples == 0 {
        return Err(MetricError::InvalidParameters("resamples must be at least 1".into()));
    }
    if !(params.sample_ratio > 0.0 && params.sample_ratio <= 1.0) {
        return Err(MetricError::InvalidParameters(format!(
            "sample_ratio must be in (0, 1], got {}",
            params.sample_ratio
        )));
    }
    Ok(())
}

fn total<M: CorpusMetric>(metric: &M, stats: &[M::Stats]) -> M::Stats {
    let mut acc = M::Stats::default();
    for s in stats {
        metric.accumulate(&mut acc, s);
    }
    acc
}

/// Paired bootstrap over precomputed per-segment statistics.
///
/// Each resample draws `ceil(sample_ratio * n)` indices with replacement from
/// its own ChaCha8 stream (`seed`, stream = resample index). The p-value is
/// the fraction of resamples whose difference is zero or has the opposite
/// sign of the observed delta; a zero delta gives p = 1.
pub fn bootstrap_stats<M: CorpusMetric>(
    metric: &M,
    stats_a: &[M::Stats],
    stats_b: &[M::Stats],
    params: &BootstrapParams,
) -> Result<SignificanceResult, MetricError> {
    if stats_a.len() != stats_b.len() {
        return Err(MetricError::LengthMismatch {
            what: "system A vs system B",
            left: stats_a.len(),
            right: stats_b.len(),
        });
    }
    let n = stats_a.len();
    check(n, params)?;
    let delta = metric.score(&total(metric, stats_a)) - metric.score(&total(metric, stats_b));
    if delta == 0.0 {
        return Ok(SignificanceResult { delta, p_value: 1.0, significant: false, resamples: params.resamples });
    }
    let m = ((params.sample_ratio * n as f64).ceil() as usize).clamp(1, n);
    let mut against = 0usize;
    for r in 0..params.resamples {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(r as u64);
        let mut acc_a = M::Stats::default();
        let mut acc_b = M::Stats::default();
        for _ in 0..m {
            let i = rng.random_range(0..n as u64) as usize;
            metric.accumulate(&mut acc_a, &stats_a[i]);
            metric.accumulate(&mut acc_b, &stats_b[i]);
        }
        let diff = metric.score(&acc_a) - metric.score(&acc_b);
        if diff * delta.signum() <= 0.0 {
            against += 1;
        }
    }
    let p_value = against as f64 / params.resamples as f64;
    Ok(SignificanceResult { delta, p_value, significant: p_value < ALPHA, resamples: params.resamples })
}

/// Paired bootstrap of two systems' hypotheses against shared references.
pub fn paired_bootstrap<M: CorpusMetric>(
    metric: &M,
    hyps_a: &[String],
    hyps_b: &[String],
    refs: &[String],
    params: &BootstrapParams,
) -> Result<SignificanceResult, MetricError> {
    for (what, hyps) in [("system A vs references", hyps_a), ("system B vs references", hyps_b)] {
        if hyps.len() != refs.len() {
            return Err(MetricError::LengthMismatch { what, left: hyps.len(), right: refs.len() });
        }
    }
    let stats =
        |hyps: &[String]| -> Vec<M::Stats> { hyps.iter().zip(refs).map(|(h, r)| metric.segment_stats(h, r)).collect() };
    bootstrap_stats(metric, &stats(hyps_a), &stats(hyps_b), params)
}

/// Paired bootstrap on segment-level scores, e.g. from an external scorer;
/// the system score is the mean.
pub fn paired_bootstrap_scores(
    scores_a: &[f64],
    scores_b: &[f64],
    params: &BootstrapParams,
) -> Result<SignificanceResult, MetricError> {
    let a: Vec<_> = scores_a.iter().map(|&s| MeanScore::stats(s)).collect();
    let b: Vec<_> = scores_b.iter().map(|&s| MeanScore::stats(s)).collect();
    bootstrap_stats(&MeanScore, &a, &b, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{Bleu, TokenScheme};
    use proptest::prelude::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn self_comparison_not_significant() {
        let refs = strings(&["a b c", "d e f", "g h i", "j k l"]);
        let hyps = strings(&["a b x", "d e f", "g y i", "j k"]);
        let bleu = Bleu { scheme: TokenScheme::Intl13a };
        let r = paired_bootstrap(&bleu, &hyps, &hyps, &refs, &BootstrapParams::default()).unwrap();
        assert_eq!(r.delta, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(!r.significant);
        assert_eq!(r.resamples, 300);
    }

    #[test]
    fn clear_separation_is_significant() {
        let a: Vec<f64> = (0..50).map(|i| 0.8 + (i % 5) as f64 * 0.01).collect();
        let b: Vec<f64> = (0..50).map(|i| 0.2 + (i % 7) as f64 * 0.01).collect();
        let r = paired_bootstrap_scores(&a, &b, &BootstrapParams { seed: 3, ..Default::default() }).unwrap();
        assert!(r.delta > 0.5);
        assert_eq!(r.p_value, 0.0);
        assert!(r.significant);
    }

    #[test]
    fn single_resample_is_zero_or_one() {
        let a = [0.1, 0.9, 0.4, 0.3];
        let b = [0.5, 0.2, 0.3, 0.6];
        for seed in 0..20 {
            let p = BootstrapParams { resamples: 1, sample_ratio: 0.5, seed };
            let r = paired_bootstrap_scores(&a, &b, &p).unwrap();
            assert!(r.p_value == 0.0 || r.p_value == 1.0);
        }
    }

    #[test]
    fn parameter_errors() {
        let p = BootstrapParams::default();
        assert!(matches!(paired_bootstrap_scores(&[1.0], &[1.0], &p), Err(MetricError::InvalidParameters(_))));
        assert!(matches!(paired_bootstrap_scores(&[1.0, 2.0], &[1.0], &p), Err(MetricError::LengthMismatch { .. })));
        let zero = BootstrapParams { resamples: 0, ..p };
        assert!(paired_bootstrap_scores(&[1.0, 2.0], &[2.0, 1.0], &zero).is_err());
        let ratio = BootstrapParams { sample_ratio: 1.5, ..p };
        assert!(paired_bootstrap_scores(&[1.0, 2.0], &[2.0, 1.0], &ratio).is_err());
        let bleu = Bleu { scheme: TokenScheme::Intl13a };
        let refs = strings(&["a", "b"]);
        assert!(matches!(
            paired_bootstrap(&bleu, &strings(&["a"]), &refs, &refs, &p),
            Err(MetricError::LengthMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn deterministic_and_well_formed(
            a in prop::collection::vec(0.0f64..1.0, 2..30),
            shift in -0.3f64..0.3,
            seed in any::<u64>(),
            resamples in 1usize..50,
        ) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + shift * ((i % 3) as f64 - 0.5)).collect();
            let p = BootstrapParams { resamples, sample_ratio: 0.4, seed };
            let r1 = paired_bootstrap_scores(&a, &b, &p).unwrap();
            let r2 = paired_bootstrap_scores(&a, &b, &p).unwrap();
            prop_assert_eq!(r1, r2);
            prop_assert!((0.0..=1.0).contains(&r1.p_value));
            prop_assert_eq!(r1.significant, r1.p_value < ALPHA);
            if r1.delta == 0.0 {
                prop_assert!(!r1.significant);
            }
            let own = paired_bootstrap_scores(&a, &a, &p).unwrap();
            prop_assert!(own.p_value >= 0.5);
        }
    }
}
