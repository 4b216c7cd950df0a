use std::collections::{BTreeMap, HashMap};

use super::tokenize::is_py_space;
use super::{validate_pairs, CorpusMetric, EvalPair, MetricError, MetricKind, MetricReport};

pub const CHAR_ORDER: usize = 6;
pub const BETA: f64 = 2.0;

/// Per-order `(hypothesis n-grams, reference n-grams, matches)` counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChrfStats {
    pub orders: [[u64; 3]; CHAR_ORDER],
}

impl std::ops::AddAssign<&ChrfStats> for ChrfStats {
    fn add_assign(&mut self, rhs: &ChrfStats) {
        for (a, b) in self.orders.iter_mut().zip(&rhs.orders) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
    }
}

fn char_ngrams(chars: &[char], n: usize) -> HashMap<&[char], u64> {
    let mut counts = HashMap::new();
    for w in chars.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

pub fn segment_stats(hypothesis: &str, reference: &str) -> ChrfStats {
    let hyp: Vec<char> = hypothesis.chars().filter(|c| !is_py_space(*c)).collect();
    let reference: Vec<char> = reference.chars().filter(|c| !is_py_space(*c)).collect();
    let mut stats = ChrfStats::default();
    for n in 1..=CHAR_ORDER {
        let h = char_ngrams(&hyp, n);
        let r = char_ngrams(&reference, n);
        let matches: u64 = h.iter().filter_map(|(g, c)| r.get(g).map(|rc| (*c).min(*rc))).sum();
        let n_ref = reference.len().saturating_sub(n - 1) as u64;
        // Hypothesis n-grams only count where the reference has some.
        let n_hyp = if n_ref > 0 { hyp.len().saturating_sub(n - 1) as u64 } else { 0 };
        stats.orders[n - 1] = [n_hyp, n_ref, matches];
    }
    stats
}

/// Character F-score: precision and recall are averaged over the orders
/// where both sides have n-grams, then combined with `beta = 2`.
pub fn score_from_stats(stats: &ChrfStats) -> f64 {
    const EPS: f64 = 1e-16;
    let factor = BETA * BETA;
    let (mut avg_prec, mut avg_rec, mut effective) = (0.0, 0.0, 0usize);
    for &[n_hyp, n_ref, n_match] in &stats.orders {
        if n_hyp > 0 && n_ref > 0 {
            avg_prec += n_match as f64 / n_hyp as f64;
            avg_rec += n_match as f64 / n_ref as f64;
            effective += 1;
        }
    }
    if effective == 0 {
        return 0.0;
    }
    avg_prec /= effective as f64;
    avg_rec /= effective as f64;
    if avg_prec + avg_rec < EPS {
        return 0.0;
    }
    100.0 * (1.0 + factor) * avg_prec * avg_rec / (factor * avg_prec + avg_rec)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Chrf;

impl CorpusMetric for Chrf {
    type Stats = ChrfStats;

    fn kind(&self) -> MetricKind {
        MetricKind::Chrf
    }

    fn segment_stats(&self, hypothesis: &str, reference: &str) -> ChrfStats {
        segment_stats(hypothesis, reference)
    }

    fn accumulate(&self, acc: &mut ChrfStats, item: &ChrfStats) {
        *acc += item;
    }

    fn score(&self, stats: &ChrfStats) -> f64 {
        score_from_stats(stats)
    }
}

pub fn corpus_chrf(pairs: &[EvalPair]) -> Result<MetricReport, MetricError> {
    validate_pairs(pairs)?;
    let mut total = ChrfStats::default();
    for p in pairs {
        total += &segment_stats(&p.hypothesis, &p.reference);
    }
    let mut details = BTreeMap::new();
    for (i, [h, r, m]) in total.orders.iter().enumerate() {
        let n = i + 1;
        details.insert(format!("hyp_ngrams_{n}"), *h as f64);
        details.insert(format!("ref_ngrams_{n}"), *r as f64);
        details.insert(format!("matches_{n}"), *m as f64);
    }
    Ok(MetricReport { metric: MetricKind::Chrf, corpus_score: score_from_stats(&total), segment_scores: None, details })
}
