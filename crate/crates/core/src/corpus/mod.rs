//! Line-aligned parallel evaluation data.
//!
//! Two on-disk layouts are supported: a pair of plain-text files with one
//! segment per line, and a single tab-separated file with `source<TAB>reference`
//! per line. Both are strict: blank lines, invalid UTF-8 and misaligned files
//! are rejected rather than repaired.

mod manifest;

pub use manifest::{CorpusEntry, CorpusSource, Manifest};

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid UTF-8 at byte {offset}")]
    Encoding { path: PathBuf, offset: usize },
    #[error("line count mismatch: {src_path} has {src_lines} lines, {ref_path} has {ref_lines}")]
    LineCountMismatch { src_path: PathBuf, ref_path: PathBuf, src_lines: usize, ref_lines: usize },
    #[error("{path}: empty segment at index {index}")]
    EmptySegment { path: PathBuf, index: usize },
    #[error("{path}: line {line}: expected exactly one tab, found {tabs}")]
    MalformedLine { path: PathBuf, line: usize, tabs: usize },
    #[error("{path}: segment {index} contains an embedded carriage return")]
    EmbeddedLineBreak { path: PathBuf, index: usize },
    #[error("{0}: corpus has no segments")]
    Empty(PathBuf),
    #[error("invalid language pair: {0}")]
    InvalidPair(String),
    #[error("test corpus `{test}` and dev corpus `{dev}` share {count} source sentences (first: {first:?})")]
    DevTestOverlap { test: String, dev: String, count: usize, first: String },
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("corpus `{name}` is not in the manifest")]
    UnknownCorpus { name: String },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Source and target language of a translation direction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LanguagePair {
    pub src: String,
    pub tgt: String,
    /// Target language name as it appears inside prompts, e.g. "German".
    pub tgt_name: String,
}

impl LanguagePair {
    pub fn new(src: &str, tgt: &str, tgt_name: &str) -> Result<Self> {
        let pair = LanguagePair { src: src.to_string(), tgt: tgt.to_string(), tgt_name: tgt_name.to_string() };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        if self.src.trim().is_empty() || self.tgt.trim().is_empty() {
            return Err(CorpusError::InvalidPair("empty language code".into()));
        }
        if self.src == self.tgt {
            return Err(CorpusError::InvalidPair(format!("source and target are both `{}`", self.src)));
        }
        if self.tgt_name.trim().is_empty() || self.tgt_name.contains(['\n', '\r']) {
            return Err(CorpusError::InvalidPair(format!("bad target name {:?}", self.tgt_name)));
        }
        Ok(())
    }

    /// Direction key used in journals and reports, e.g. `zh-ro`.
    pub fn direction(&self) -> String {
        format!("{}-{}", self.src, self.tgt)
    }
}

impl fmt::Display for LanguagePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.src, self.tgt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: usize,
    pub source: String,
    pub reference: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Test,
    Dev,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "test" => Ok(Split::Test),
            "dev" => Ok(Split::Dev),
            other => Err(format!("unknown split `{other}` (expected test or dev)")),
        }
    }
}

/// An immutable, validated parallel corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    pair: LanguagePair,
    domain: String,
    split: Split,
    segments: Vec<Segment>,
}

impl ParallelCorpus {
    /// Builds a corpus from in-memory `(source, reference)` pairs, applying
    /// the same trimming and validation as the file loaders.
    pub fn from_pairs<I, S, R>(pair: LanguagePair, domain: &str, split: Split, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, R)>,
        S: AsRef<str>,
        R: AsRef<str>,
    {
        let origin = PathBuf::from("<memory>");
        let mut segments = Vec::new();
        for (index, (s, r)) in pairs.into_iter().enumerate() {
            let source = clean_segment(s.as_ref(), &origin, index)?;
            let reference = clean_segment(r.as_ref(), &origin, index)?;
            segments.push(Segment { id: index, source, reference });
        }
        Self::assemble(pair, domain, split, segments, &origin)
    }

    fn assemble(pair: LanguagePair, domain: &str, split: Split, segments: Vec<Segment>, origin: &Path) -> Result<Self> {
        pair.validate()?;
        if segments.is_empty() {
            return Err(CorpusError::Empty(origin.to_path_buf()));
        }
        Ok(ParallelCorpus { pair, domain: domain.to_string(), split, segments })
    }

    pub fn pair(&self) -> &LanguagePair {
        &self.pair
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Keeps `size` segments chosen by `seed`, renumbering ids from zero in
    /// their original order.
    pub fn subset(&self, size: usize, seed: u64) -> ParallelCorpus {
        let mut ids = crate::select::sample_indices(self.segments.len(), size.min(self.len()), seed);
        ids.sort_unstable();
        let segments = ids
            .into_iter()
            .enumerate()
            .map(|(new_id, old)| Segment { id: new_id, ..self.segments[old].clone() })
            .collect();
        ParallelCorpus { segments, ..self.clone() }
    }

    /// Checks that no source sentence of `dev` appears verbatim in `self`.
    pub fn check_disjoint(&self, self_name: &str, dev: &ParallelCorpus, dev_name: &str) -> Result<()> {
        let test_sources: HashSet<&str> = self.segments.iter().map(|s| s.source.as_str()).collect();
        let overlap: Vec<&str> =
            dev.segments.iter().map(|s| s.source.as_str()).filter(|s| test_sources.contains(s)).collect();
        match overlap.first() {
            None => Ok(()),
            Some(first) => Err(CorpusError::DevTestOverlap {
                test: self_name.to_string(),
                dev: dev_name.to_string(),
                count: overlap.len(),
                first: first.to_string(),
            }),
        }
    }

    /// Writes the corpus back as two line-aligned files.
    pub fn write_parallel(&self, src_path: &Path, ref_path: &Path) -> Result<()> {
        let mut src = String::new();
        let mut reference = String::new();
        for seg in &self.segments {
            src.push_str(&seg.source);
            src.push('\n');
            reference.push_str(&seg.reference);
            reference.push('\n');
        }
        write_file(src_path, &src)?;
        write_file(ref_path, &reference)
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for seg in &self.segments {
            out.push_str(&seg.source);
            out.push('\t');
            out.push_str(&seg.reference);
            out.push('\n');
        }
        write_file(path, &out)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })
}

fn read_utf8(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    String::from_utf8(bytes)
        .map_err(|e| CorpusError::Encoding { path: path.to_path_buf(), offset: e.utf8_error().valid_up_to() })
}

/// Splits on LF; a single trailing newline does not start a new line.
fn split_lines(text: &str) -> Vec<&str> {
    if text.is_empty() {
        return Vec::new();
    }
    let body = text.strip_suffix('\n').unwrap_or(text);
    body.split('\n').collect()
}

fn clean_segment(raw: &str, path: &Path, index: usize) -> Result<String> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(CorpusError::EmptySegment { path: path.to_path_buf(), index });
    }
    if trimmed.contains(['\n', '\r']) {
        return Err(CorpusError::EmbeddedLineBreak { path: path.to_path_buf(), index });
    }
    Ok(trimmed.to_string())
}

/// Loads two line-aligned files, one segment per line.
pub fn load_parallel(
    src_path: &Path,
    ref_path: &Path,
    pair: LanguagePair,
    domain: &str,
    split: Split,
) -> Result<ParallelCorpus> {
    let src_text = read_utf8(src_path)?;
    let ref_text = read_utf8(ref_path)?;
    let src_lines = split_lines(&src_text);
    let ref_lines = split_lines(&ref_text);
    if src_lines.len() != ref_lines.len() {
        return Err(CorpusError::LineCountMismatch {
            src_path: src_path.to_path_buf(),
            ref_path: ref_path.to_path_buf(),
            src_lines: src_lines.len(),
            ref_lines: ref_lines.len(),
        });
    }
    let mut segments = Vec::with_capacity(src_lines.len());
    for (index, (s, r)) in src_lines.iter().zip(&ref_lines).enumerate() {
        segments.push(Segment {
            id: index,
            source: clean_segment(s, src_path, index)?,
            reference: clean_segment(r, ref_path, index)?,
        });
    }
    ParallelCorpus::assemble(pair, domain, split, segments, src_path)
}

/// Loads a `source<TAB>reference` file. Line numbers in errors are 1-based.
pub fn load_tsv(path: &Path, pair: LanguagePair, domain: &str, split: Split) -> Result<ParallelCorpus> {
    let text = read_utf8(path)?;
    let mut segments = Vec::new();
    for (index, line) in split_lines(&text).into_iter().enumerate() {
        let tabs = line.matches('\t').count();
        if line.trim().is_empty() {
            return Err(CorpusError::EmptySegment { path: path.to_path_buf(), index });
        }
        if tabs != 1 {
            return Err(CorpusError::MalformedLine { path: path.to_path_buf(), line: index + 1, tabs });
        }
        let (s, r) = line.split_once('\t').expect("one tab");
        segments.push(Segment {
            id: index,
            source: clean_segment(s, path, index)?,
            reference: clean_segment(r, path, index)?,
        });
    }
    ParallelCorpus::assemble(pair, domain, split, segments, path)
}
