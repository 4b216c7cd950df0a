use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{load_parallel, load_tsv, CorpusError, LanguagePair, ParallelCorpus, Result, Split};

/// One `[[corpus]]` entry of a dataset manifest.
///
/// ```toml
/// [[corpus]]
/// name = "flores-en-de"
/// src_path = "flores/en.devtest"
/// ref_path = "flores/de.devtest"
/// src_lang = "en"
/// tgt_lang = "de"
/// tgt_name = "German"
/// domain = "general"
/// split = "test"
/// ```
///
/// `tsv_path` replaces the `src_path`/`ref_path` pair for tab-separated data.
/// Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    pub name: String,
    #[serde(default)]
    pub src_path: Option<PathBuf>,
    #[serde(default)]
    pub ref_path: Option<PathBuf>,
    #[serde(default)]
    pub tsv_path: Option<PathBuf>,
    pub src_lang: String,
    pub tgt_lang: String,
    pub tgt_name: String,
    pub domain: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorpusSource {
    Parallel { src: PathBuf, reference: PathBuf },
    Tsv(PathBuf),
}

impl CorpusEntry {
    pub fn pair(&self) -> Result<LanguagePair> {
        LanguagePair::new(&self.src_lang, &self.tgt_lang, &self.tgt_name)
    }

    fn source(&self, base: &Path, manifest: &Path) -> Result<CorpusSource> {
        let bad = |message: String| CorpusError::Manifest { path: manifest.to_path_buf(), message };
        match (&self.src_path, &self.ref_path, &self.tsv_path) {
            (Some(s), Some(r), None) => Ok(CorpusSource::Parallel { src: base.join(s), reference: base.join(r) }),
            (None, None, Some(t)) => Ok(CorpusSource::Tsv(base.join(t))),
            _ => Err(bad(format!("corpus `{}` needs either src_path+ref_path or tsv_path", self.name))),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    #[serde(default)]
    corpus: Vec<CorpusEntry>,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    path: PathBuf,
    base: PathBuf,
    entries: Vec<CorpusEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, path, &base)
    }

    pub fn parse(text: &str, path: &Path, base: &Path) -> Result<Manifest> {
        let file: ManifestFile = toml::from_str(text)
            .map_err(|e| CorpusError::Manifest { path: path.to_path_buf(), message: e.to_string() })?;
        let mut seen = BTreeSet::new();
        for entry in &file.corpus {
            if !seen.insert(entry.name.as_str()) {
                return Err(CorpusError::Manifest {
                    path: path.to_path_buf(),
                    message: format!("duplicate corpus name `{}`", entry.name),
                });
            }
            entry.source(base, path)?;
            entry.pair()?;
        }
        Ok(Manifest { path: path.to_path_buf(), base: base.to_path_buf(), entries: file.corpus })
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Result<&CorpusEntry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| CorpusError::UnknownCorpus { name: name.to_string() })
    }

    /// All domain tags declared in the manifest.
    pub fn domains(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.domain.clone()).collect()
    }

    pub fn load_corpus(&self, name: &str) -> Result<ParallelCorpus> {
        let entry = self.entry(name)?;
        let pair = entry.pair()?;
        match entry.source(&self.base, &self.path)? {
            CorpusSource::Parallel { src, reference } => {
                load_parallel(&src, &reference, pair, &entry.domain, entry.split)
            }
            CorpusSource::Tsv(path) => load_tsv(&path, pair, &entry.domain, entry.split),
        }
    }

    /// Loads a test corpus together with its demonstration pool and asserts
    /// that the two share no source sentence.
    pub fn load_test_dev(&self, test: &str, dev: &str) -> Result<(ParallelCorpus, ParallelCorpus)> {
        let test_corpus = self.load_corpus(test)?;
        let dev_corpus = self.load_corpus(dev)?;
        let manifest_err = |message: String| CorpusError::Manifest { path: self.path.clone(), message };
        if test_corpus.split() != Split::Test {
            return Err(manifest_err(format!("corpus `{test}` is not a test split")));
        }
        if dev_corpus.split() != Split::Dev {
            return Err(manifest_err(format!("corpus `{dev}` is not a dev split")));
        }
        if test_corpus.pair().src != dev_corpus.pair().src || test_corpus.pair().tgt != dev_corpus.pair().tgt {
            return Err(manifest_err(format!(
                "corpora `{test}` ({}) and `{dev}` ({}) have different directions",
                test_corpus.pair(),
                dev_corpus.pair()
            )));
        }
        test_corpus.check_disjoint(test, &dev_corpus, dev)?;
        Ok((test_corpus, dev_corpus))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    const MANIFEST: &str = r#"
[[corpus]]
name = "t"
src_path = "t.en"
ref_path = "t.de"
src_lang = "en"
tgt_lang = "de"
tgt_name = "German"
domain = "news"
split = "test"

[[corpus]]
name = "d"
tsv_path = "d.tsv"
src_lang = "en"
tgt_lang = "de"
tgt_name = "German"
domain = "news"
split = "dev"
"#;

    fn setup(dev_tsv: &str) -> (TempDir, Manifest) {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("t.en"), "one\ntwo\n").unwrap();
        fs::write(dir.path().join("t.de"), "eins\nzwei\n").unwrap();
        fs::write(dir.path().join("d.tsv"), dev_tsv).unwrap();
        let mpath = dir.path().join("manifest.toml");
        fs::write(&mpath, MANIFEST).unwrap();
        let m = Manifest::load(&mpath).unwrap();
        (dir, m)
    }

    #[test]
    fn resolves_relative_paths() {
        let (_dir, m) = setup("three\tdrei\n");
        let (t, d) = m.load_test_dev("t", "d").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(d.len(), 1);
        assert_eq!(d.split(), Split::Dev);
        assert_eq!(m.domains().into_iter().collect::<Vec<_>>(), vec!["news".to_string()]);
    }

    #[test]
    fn overlap_detected() {
        let (_dir, m) = setup("two\tzwei\n");
        assert!(matches!(m.load_test_dev("t", "d"), Err(CorpusError::DevTestOverlap { .. })));
    }

    #[test]
    fn unknown_corpus() {
        let (_dir, m) = setup("x\ty\n");
        assert!(matches!(m.load_corpus("nope"), Err(CorpusError::UnknownCorpus { .. })));
    }

    #[test]
    fn both_layouts_rejected() {
        let text = r#"
[[corpus]]
name = "x"
src_path = "a"
ref_path = "b"
tsv_path = "c"
src_lang = "en"
tgt_lang = "de"
tgt_name = "German"
domain = "news"
split = "test"
"#;
        let err = Manifest::parse(text, Path::new("m.toml"), Path::new(".")).unwrap_err();
        assert!(matches!(err, CorpusError::Manifest { .. }));
    }
}
