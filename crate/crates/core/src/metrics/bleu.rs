use std::collections::{BTreeMap, HashMap};

use super::tokenize::{tokenize, TokenScheme};
use super::{validate_pairs, CorpusMetric, EvalPair, MetricError, MetricKind, MetricReport};

pub const MAX_ORDER: usize = 4;

/// Sufficient statistics for corpus BLEU; corpus values are plain sums.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub hyp_len: u64,
    pub ref_len: u64,
    pub correct: [u64; MAX_ORDER],
    pub total: [u64; MAX_ORDER],
}

impl std::ops::AddAssign<&BleuStats> for BleuStats {
    fn add_assign(&mut self, rhs: &BleuStats) {
        self.hyp_len += rhs.hyp_len;
        self.ref_len += rhs.ref_len;
        for n in 0..MAX_ORDER {
            self.correct[n] += rhs.correct[n];
            self.total[n] += rhs.total[n];
        }
    }
}

fn ngram_counts(tokens: &[String]) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    for n in 1..=MAX_ORDER {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// The reference tool right-strips each line before tokenizing.
fn prepare(text: &str, scheme: TokenScheme) -> Vec<String> {
    tokenize(text.trim_end_matches(super::tokenize::is_py_space), scheme)
}

pub fn segment_stats(hypothesis: &str, reference: &str, scheme: TokenScheme) -> BleuStats {
    let hyp = prepare(hypothesis, scheme);
    let reference = prepare(reference, scheme);
    let ref_counts = ngram_counts(&reference);
    let mut stats = BleuStats { hyp_len: hyp.len() as u64, ref_len: reference.len() as u64, ..BleuStats::default() };
    for (gram, count) in ngram_counts(&hyp) {
        let n = gram.len() - 1;
        stats.total[n] += count;
        if let Some(r) = ref_counts.get(gram) {
            stats.correct[n] += count.min(*r);
        }
    }
    stats
}

/// Score breakdown computed from summed statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
}

fn floored_ln(x: f64) -> f64 {
    if x == 0.0 {
        -9_999_999_999.0
    } else {
        x.ln()
    }
}

/// BLEU with exponential smoothing: the k-th order with zero matches gets
/// precision `1 / (2^k * total)`. No matches at all scores 0.
pub fn score_from_stats(stats: &BleuStats) -> BleuScore {
    let bp = if stats.hyp_len < stats.ref_len {
        if stats.hyp_len > 0 {
            (1.0 - stats.ref_len as f64 / stats.hyp_len as f64).exp()
        } else {
            0.0
        }
    } else {
        1.0
    };
    let mut precisions = [0.0; MAX_ORDER];
    let mut result =
        BleuScore { score: 0.0, precisions, brevity_penalty: bp, hyp_len: stats.hyp_len, ref_len: stats.ref_len };
    if stats.correct.iter().all(|&c| c == 0) {
        return result;
    }
    let mut smooth = 1.0;
    for (n, precision) in precisions.iter_mut().enumerate() {
        if stats.total[n] == 0 {
            break;
        }
        *precision = if stats.correct[n] == 0 {
            smooth *= 2.0;
            100.0 / (smooth * stats.total[n] as f64)
        } else {
            100.0 * stats.correct[n] as f64 / stats.total[n] as f64
        };
    }
    let log_mean = precisions.iter().map(|&p| floored_ln(p)).sum::<f64>() / MAX_ORDER as f64;
    result.score = bp * log_mean.exp();
    result.precisions = precisions;
    result
}

#[derive(Debug, Clone, Copy)]
pub struct Bleu {
    pub scheme: TokenScheme,
}

impl CorpusMetric for Bleu {
    type Stats = BleuStats;

    fn kind(&self) -> MetricKind {
        MetricKind::Bleu
    }

    fn segment_stats(&self, hypothesis: &str, reference: &str) -> BleuStats {
        segment_stats(hypothesis, reference, self.scheme)
    }

    fn accumulate(&self, acc: &mut BleuStats, item: &BleuStats) {
        *acc += item;
    }

    fn score(&self, stats: &BleuStats) -> f64 {
        score_from_stats(stats).score
    }
}

pub fn corpus_bleu(pairs: &[EvalPair], scheme: TokenScheme) -> Result<MetricReport, MetricError> {
    validate_pairs(pairs)?;
    let mut total = BleuStats::default();
    for p in pairs {
        total += &segment_stats(&p.hypothesis, &p.reference, scheme);
    }
    let s = score_from_stats(&total);
    let mut details = BTreeMap::new();
    for (n, p) in s.precisions.iter().enumerate() {
        details.insert(format!("precision_{}", n + 1), *p);
    }
    details.insert("brevity_penalty".into(), s.brevity_penalty);
    details.insert("hyp_len".into(), s.hyp_len as f64);
    details.insert("ref_len".into(), s.ref_len as f64);
    Ok(MetricReport { metric: MetricKind::Bleu, corpus_score: s.score, segment_scores: None, details })
}
