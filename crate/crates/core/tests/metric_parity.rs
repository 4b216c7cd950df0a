use mtprompt::metrics::{corpus_bleu, corpus_chrf, tokenize, EvalPair, TokenScheme};
use serde::Deserialize;

#[derive(Deserialize)]
struct Pair {
    hypothesis: String,
    reference: String,
}

#[derive(Deserialize)]
struct Corpus {
    id: usize,
    tokenize: String,
    pairs: Vec<Pair>,
    bleu: f64,
    bleu_bp: f64,
    bleu_sys_len: u64,
    bleu_ref_len: u64,
    chrf: f64,
}

#[derive(Deserialize)]
struct TokCase {
    text: String,
    scheme: String,
    tokens: Vec<String>,
}

#[derive(Deserialize)]
struct TenPair {
    pairs: Vec<Pair>,
    chrf: f64,
}

#[derive(Deserialize)]
struct Oracle {
    cat_on_mat_bleu: f64,
    ten_pair_chrf: TenPair,
    tokenizer_cases: Vec<TokCase>,
    corpora: Vec<Corpus>,
}

fn oracle() -> Oracle {
    let text = include_str!("fixtures/metric_oracle.json");
    serde_json::from_str(text).expect("fixture parses")
}

fn eval_pairs(pairs: &[Pair]) -> Vec<EvalPair> {
    pairs.iter().map(|p| EvalPair::new(p.hypothesis.as_str(), p.reference.as_str())).collect()
}

#[test]
fn tokenizer_cases_match() {
    for case in oracle().tokenizer_cases {
        let scheme: TokenScheme = case.scheme.parse().unwrap();
        assert_eq!(tokenize(&case.text, scheme), case.tokens, "{:?} under {}", case.text, case.scheme);
    }
}

#[test]
fn cat_on_mat_bleu() {
    let o = oracle();
    let r =
        corpus_bleu(&[EvalPair::new("the cat sat on the mat", "the cat is on the mat")], TokenScheme::Intl13a).unwrap();
    assert!((r.corpus_score - o.cat_on_mat_bleu).abs() <= 0.01, "{} vs {}", r.corpus_score, o.cat_on_mat_bleu);
}

#[test]
fn ten_pair_chrf() {
    let o = oracle();
    let r = corpus_chrf(&eval_pairs(&o.ten_pair_chrf.pairs)).unwrap();
    assert!((r.corpus_score - o.ten_pair_chrf.chrf).abs() <= 0.01);
}

#[test]
fn fifty_corpora_within_tolerance() {
    let o = oracle();
    assert_eq!(o.corpora.len(), 50);
    for c in &o.corpora {
        assert!(c.pairs.len() >= 20);
        let scheme: TokenScheme = c.tokenize.parse().unwrap();
        let pairs = eval_pairs(&c.pairs);
        let bleu = corpus_bleu(&pairs, scheme).unwrap();
        assert!((bleu.corpus_score - c.bleu).abs() <= 0.05, "corpus {} bleu {} vs {}", c.id, bleu.corpus_score, c.bleu);
        assert_eq!(bleu.details["hyp_len"] as u64, c.bleu_sys_len, "corpus {}", c.id);
        assert_eq!(bleu.details["ref_len"] as u64, c.bleu_ref_len, "corpus {}", c.id);
        assert!((bleu.details["brevity_penalty"] - c.bleu_bp).abs() <= 1e-9, "corpus {}", c.id);
        let chrf = corpus_chrf(&pairs).unwrap();
        assert!((chrf.corpus_score - c.chrf).abs() <= 0.05, "corpus {} chrf {} vs {}", c.id, chrf.corpus_score, c.chrf);
    }
}

#[test]
fn fifty_corpora_match_to_rounding() {
    for c in &oracle().corpora {
        let scheme: TokenScheme = c.tokenize.parse().unwrap();
        let pairs = eval_pairs(&c.pairs);
        let bleu = corpus_bleu(&pairs, scheme).unwrap().corpus_score;
        let chrf = corpus_chrf(&pairs).unwrap().corpus_score;
        assert!((bleu - c.bleu).abs() <= 1e-9, "corpus {} bleu {bleu} vs {}", c.id, c.bleu);
        assert!((chrf - c.chrf).abs() <= 1e-9, "corpus {} chrf {chrf} vs {}", c.id, c.chrf);
    }
}
