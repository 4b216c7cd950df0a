//! Synthetic corpora and configs shared by the integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use mtprompt::runner::ExperimentConfig;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DE: &[&str] = &[
    "der",
    "die",
    "das",
    "Haus",
    "Stadt",
    "Regierung",
    "Patient",
    "Arzt",
    "Bericht",
    "heute",
    "gestern",
    "wichtig",
    "neue",
    "alte",
    "schnell",
    "langsam",
    "Wasser",
    "Spiel",
    "Mannschaft",
    "Gericht",
    "Studie",
    "zeigt",
    "sagte",
    "wurde",
    "haben",
    "nicht",
    "viele",
    "Menschen",
    "Jahr",
    "Woche",
];
const EN: &[&str] = &[
    "the",
    "a",
    "house",
    "city",
    "government",
    "patient",
    "doctor",
    "report",
    "today",
    "yesterday",
    "important",
    "new",
    "old",
    "quickly",
    "slowly",
    "water",
    "game",
    "team",
    "court",
    "study",
    "shows",
    "said",
    "was",
    "have",
    "not",
    "many",
    "people",
    "year",
    "week",
    "council",
    "market",
    "school",
];

fn sentence(rng: &mut ChaCha8Rng, words: &[&str], id: usize) -> String {
    let len = rng.random_range(12..20);
    let mut out: Vec<String> = (0..len).map(|_| words.choose(rng).unwrap().to_string()).collect();
    // A unique marker keeps every source distinct.
    out.push(format!("n{id}"));
    out.join(" ") + "."
}

fn write_split(dir: &Path, stem: &str, n: usize, offset: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut src = String::new();
    let mut reference = String::new();
    for i in 0..n {
        src += &(sentence(&mut rng, DE, offset + i) + "\n");
        reference += &(sentence(&mut rng, EN, offset + i) + "\n");
    }
    fs::write(dir.join(format!("{stem}.de")), src).unwrap();
    fs::write(dir.join(format!("{stem}.en")), reference).unwrap();
}

/// Writes a German-English test set of `n_test` segments, a disjoint dev
/// pool and a second-domain corpus, returning the manifest path.
pub fn write_fixture(dir: &Path, n_test: usize, n_dev: usize) -> PathBuf {
    let data = dir.join("data");
    fs::create_dir_all(&data).unwrap();
    write_split(&data, "news.test", n_test, 0, 1);
    write_split(&data, "news.dev", n_dev, 10_000, 2);
    write_split(&data, "bio.test", 10, 20_000, 3);
    let manifest = dir.join("manifest.toml");
    fs::write(
        &manifest,
        r#"[[corpus]]
name = "news-test"
src_path = "data/news.test.de"
ref_path = "data/news.test.en"
src_lang = "de"
tgt_lang = "en"
tgt_name = "English"
domain = "news"
split = "test"

[[corpus]]
name = "news-dev"
src_path = "data/news.dev.de"
ref_path = "data/news.dev.en"
src_lang = "de"
tgt_lang = "en"
tgt_name = "English"
domain = "news"
split = "dev"

[[corpus]]
name = "bio-test"
src_path = "data/bio.test.de"
ref_path = "data/bio.test.en"
src_lang = "de"
tgt_lang = "en"
tgt_name = "English"
domain = "biomedical"
split = "test"
"#,
    )
    .unwrap();
    manifest
}

/// A config over the fixture in `dir`; `extra` is appended as TOML. The
/// endpoint table is opened last, so `extra` may add keys to it.
pub fn config(dir: &Path, out: &str, top: &str, endpoint: &str) -> ExperimentConfig {
    let text = format!(
        "manifest = \"manifest.toml\"\ncorpus = \"news-test\"\noutput_dir = \"{out}\"\n{top}\n[endpoint]\nbackoff_base_ms = 1\nbackoff_cap_ms = 4\n{endpoint}\n"
    );
    ExperimentConfig::parse(&text, dir).unwrap()
}
