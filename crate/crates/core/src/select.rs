//! Demonstration selection from a development pool.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ParallelCorpus, Segment};
use crate::prompt::Demo;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectError {
    #[error("requested {requested} demonstrations but the pool only has {available}")]
    PoolExhausted { requested: usize, available: usize },
    #[error("unknown selector `{0}` (expected random or topk)")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMethod {
    Random,
    Topk,
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMethod::Random => "random",
            SelectionMethod::Topk => "topk",
        })
    }
}

impl FromStr for SelectionMethod {
    type Err = SelectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(SelectionMethod::Random),
            "topk" => Ok(SelectionMethod::Topk),
            other => Err(SelectError::UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    #[default]
    LexicalOverlap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionSpec {
    pub method: SelectionMethod,
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub similarity: Similarity,
}

fn demo(seg: &Segment) -> Demo {
    Demo { source: seg.source.clone(), reference: seg.reference.clone() }
}

/// Draws `k` distinct indices from `0..n` by a partial Fisher-Yates shuffle
/// driven by ChaCha8. Sampling goes through `u64` so the sequence does not
/// depend on the platform's pointer width.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    assert!(k <= n, "cannot sample {k} of {n}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i as u64..n as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Uniformly samples `k` pool segments without replacement, in draw order.
pub fn select_random(pool: &ParallelCorpus, k: usize, seed: u64) -> Result<Vec<Demo>, SelectError> {
    let segs: Vec<&Segment> = pool.segments().iter().collect();
    select_random_from(&segs, k, seed)
}

fn select_random_from(pool: &[&Segment], k: usize, seed: u64) -> Result<Vec<Demo>, SelectError> {
    if k > pool.len() {
        return Err(SelectError::PoolExhausted { requested: k, available: pool.len() });
    }
    Ok(sample_indices(pool.len(), k, seed).into_iter().map(|i| demo(pool[i])).collect())
}

fn token_set(text: &str) -> HashSet<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Jaccard overlap of lowercased whitespace tokens.
pub fn lexical_similarity(a: &str, b: &str) -> f64 {
    let ta = token_set(a);
    let tb = token_set(b);
    jaccard(&ta, &tb)
}

fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Orders by descending similarity, then ascending segment id.
fn rank(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// The `k` pool segments most similar to `query`, most similar first.
pub fn select_topk(
    pool: &ParallelCorpus,
    query: &str,
    k: usize,
    spec: &SelectionSpec,
) -> Result<Vec<Demo>, SelectError> {
    let segs: Vec<&Segment> = pool.segments().iter().collect();
    select_topk_from(&segs, query, k, spec.similarity)
}

fn select_topk_from(
    pool: &[&Segment],
    query: &str,
    k: usize,
    similarity: Similarity,
) -> Result<Vec<Demo>, SelectError> {
    if k > pool.len() {
        return Err(SelectError::PoolExhausted { requested: k, available: pool.len() });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let Similarity::LexicalOverlap = similarity;
    let q = token_set(query);
    let mut scored: Vec<(f64, usize)> =
        pool.iter().enumerate().map(|(pos, seg)| (jaccard(&q, &token_set(&seg.source)), pos)).collect();
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, rank);
        scored.truncate(k);
    }
    scored.sort_by(rank);
    Ok(scored.into_iter().map(|(_, pos)| demo(pool[pos])).collect())
}

/// Chooses demonstrations for one test sentence, excluding any pool segment
/// whose source equals `query` verbatim.
///
/// TopK results are returned least similar first so the closest example sits
/// next to the query in the prompt; random draws keep their draw order.
pub fn select_demos(
    pool: &ParallelCorpus,
    query: &str,
    spec: &SelectionSpec,
    seed: u64,
) -> Result<Vec<Demo>, SelectError> {
    let eligible: Vec<&Segment> = pool.segments().iter().filter(|s| s.source != query).collect();
    match spec.method {
        SelectionMethod::Random => select_random_from(&eligible, spec.k, seed),
        SelectionMethod::Topk => {
            let mut demos = select_topk_from(&eligible, query, spec.k, spec.similarity)?;
            demos.reverse();
            Ok(demos)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LanguagePair, Split};
    use proptest::prelude::*;

    fn pool(sources: &[&str]) -> ParallelCorpus {
        let pair = LanguagePair::new("en", "de", "German").unwrap();
        ParallelCorpus::from_pairs(pair, "general", Split::Dev, sources.iter().map(|s| (*s, s.to_uppercase()))).unwrap()
    }

    fn ten() -> ParallelCorpus {
        pool(&["s0", "s1", "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9"])
    }

    #[test]
    fn random_k_zero() {
        assert!(select_random(&ten(), 0, 3).unwrap().is_empty());
    }

    #[test]
    fn random_full_permutation() {
        let p = ten();
        let picked = select_random(&p, 10, 9).unwrap();
        let mut sources: Vec<String> = picked.into_iter().map(|d| d.source).collect();
        sources.sort();
        let mut expected: Vec<String> = p.segments().iter().map(|s| s.source.clone()).collect();
        expected.sort();
        assert_eq!(sources, expected);
    }

    #[test]
    fn random_seed_42_is_frozen() {
        let first: Vec<String> = select_random(&ten(), 3, 42).unwrap().into_iter().map(|d| d.source).collect();
        let second: Vec<String> = select_random(&ten(), 3, 42).unwrap().into_iter().map(|d| d.source).collect();
        assert_eq!(first, second);
        // recorded on first execution; guards against generator drift
        assert_eq!(first, vec!["s6", "s9", "s5"]);
    }

    #[test]
    fn random_pool_exhausted() {
        assert_eq!(select_random(&ten(), 11, 0), Err(SelectError::PoolExhausted { requested: 11, available: 10 }));
    }

    #[test]
    fn random_covers_pool() {
        let p = ten();
        let seen: HashSet<String> =
            (0..1000u64).map(|seed| select_random(&p, 1, seed).unwrap().remove(0).source).collect();
        assert_eq!(seen.len(), 10);
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(lexical_similarity("a b c", "a b c"), 1.0);
        assert_eq!(lexical_similarity("a b", "c d"), 0.0);
        assert_eq!(lexical_similarity("a b c", "a b d"), 0.5);
        assert_eq!(lexical_similarity("", ""), 0.0);
        assert_eq!(lexical_similarity("The Cat", "the cat"), 1.0);
    }

    #[test]
    fn topk_argmax() {
        // shares 3, 1 and 0 tokens with the query
        let p = pool(&["x y", "q1 z z2", "q1 q2 q3"]);
        let spec =
            SelectionSpec { method: SelectionMethod::Topk, k: 1, seed: 0, similarity: Similarity::LexicalOverlap };
        let got = select_topk(&p, "q1 q2 q3 q4", 1, &spec).unwrap();
        assert_eq!(got[0].source, "q1 q2 q3");
        let all = select_topk(&p, "q1 q2 q3 q4", 3, &spec).unwrap();
        let order: Vec<&str> = all.iter().map(|d| d.source.as_str()).collect();
        assert_eq!(order, vec!["q1 q2 q3", "q1 z z2", "x y"]);
    }

    #[test]
    fn topk_ties_by_id() {
        let p = pool(&["a", "b", "c", "d"]);
        let spec =
            SelectionSpec { method: SelectionMethod::Topk, k: 2, seed: 0, similarity: Similarity::LexicalOverlap };
        let got = select_topk(&p, "zzz", 2, &spec).unwrap();
        assert_eq!(got.iter().map(|d| d.source.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
        assert!(matches!(select_topk(&p, "zzz", 5, &spec), Err(SelectError::PoolExhausted { .. })));
    }

    #[test]
    fn demos_exclude_exact_query_and_reverse_topk() {
        let p = pool(&["q1 q2", "q1 q2 q3", "q1"]);
        let spec =
            SelectionSpec { method: SelectionMethod::Topk, k: 2, seed: 0, similarity: Similarity::LexicalOverlap };
        let got = select_demos(&p, "q1 q2 q3", &spec, 0).unwrap();
        assert_eq!(got.iter().map(|d| d.source.as_str()).collect::<Vec<_>>(), vec!["q1", "q1 q2"]);
        let rspec =
            SelectionSpec { method: SelectionMethod::Random, k: 2, seed: 0, similarity: Similarity::LexicalOverlap };
        for seed in 0..50 {
            assert!(select_demos(&p, "q1", &rspec, seed).unwrap().iter().all(|d| d.source != "q1"));
        }
        let too_many = SelectionSpec { k: 3, ..rspec };
        assert!(matches!(select_demos(&p, "q1", &too_many, 0), Err(SelectError::PoolExhausted { available: 2, .. })));
    }

    proptest! {
        #[test]
        fn similarity_symmetric(a in "[a-cA-C ]{0,20}", b in "[a-cA-C ]{0,20}") {
            prop_assert_eq!(lexical_similarity(&a, &b), lexical_similarity(&b, &a));
            let s = lexical_similarity(&a, &b);
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn random_reproducible(seed in any::<u64>(), k in 0usize..=10) {
            let p = ten();
            prop_assert_eq!(select_random(&p, k, seed).unwrap(), select_random(&p, k, seed).unwrap());
        }
    }
}
