//! Append-only journal of translation records.
//!
//! `journal.jsonl` holds one deterministic record per (run, segment), in
//! order. Timing and cache provenance go to `provenance.jsonl` so the journal
//! bytes depend only on the configuration. `meta.json` pins the config digest
//! so a resume cannot mix outputs of different configurations.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunnerError;
use crate::prompt::MessageList;

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const PROVENANCE_FILE: &str = "provenance.jsonl";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TranslationRecord {
    pub run: usize,
    pub segment_id: usize,
    pub direction: String,
    pub source: String,
    pub reference: String,
    pub messages: MessageList,
    pub raw: String,
    pub text: String,
    pub edited: bool,
    pub rules_fired: Vec<String>,
    pub cache_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub run: usize,
    pub segment_id: usize,
    pub cached: bool,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Meta {
    config_digest: String,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RunnerError + '_ {
    move |e| RunnerError::Io { path: path.to_path_buf(), message: e.to_string() }
}

/// Resolves a run directory or journal file to the journal path.
pub fn journal_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(JOURNAL_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Reads complete records. A final line without a newline is a torn write
/// and is ignored; any other unparsable line is an error.
pub fn read_journal(path: &Path) -> Result<Vec<TranslationRecord>, RunnerError> {
    let path = journal_path(path);
    let file = File::open(&path).map_err(io_err(&path))?;
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut line = String::new();
    let mut number = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(io_err(&path))?;
        if n == 0 {
            break;
        }
        number += 1;
        if !line.ends_with('\n') {
            log::warn!("{}: ignoring torn final line {number}", path.display());
            break;
        }
        let record = serde_json::from_str(line.trim_end())
            .map_err(|e| RunnerError::Journal { path: path.clone(), message: format!("line {number}: {e}") })?;
        records.push(record);
    }
    Ok(records)
}

/// Byte length of the complete lines in `path`.
fn complete_prefix_len(path: &Path) -> Result<u64, RunnerError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i as u64 + 1))
}

pub struct JournalWriter {
    journal: File,
    provenance: File,
    path: PathBuf,
}

impl JournalWriter {
    /// Opens the journal in `dir` for appending, checking the config digest
    /// against earlier runs and dropping any torn trailing line. Returns the
    /// writer and the records already present.
    pub fn open(dir: &Path, digest: &str) -> Result<(JournalWriter, Vec<TranslationRecord>), RunnerError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let meta_path = dir.join(META_FILE);
        let journal_path = dir.join(JOURNAL_FILE);
        if meta_path.exists() {
            let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
            let meta: Meta = serde_json::from_str(&text)
                .map_err(|e| RunnerError::Journal { path: meta_path.clone(), message: e.to_string() })?;
            if meta.config_digest != digest {
                return Err(RunnerError::ConfigChanged {
                    dir: dir.to_path_buf(),
                    journaled: meta.config_digest,
                    current: digest.to_string(),
                });
            }
        } else {
            if journal_path.exists() {
                return Err(RunnerError::Journal {
                    path: journal_path,
                    message: format!("journal without {META_FILE}; refusing to append"),
                });
            }
            let meta = serde_json::to_string_pretty(&Meta { config_digest: digest.to_string() }).unwrap();
            fs::write(&meta_path, meta + "\n").map_err(io_err(&meta_path))?;
        }

        let existing = if journal_path.exists() {
            let records = read_journal(&journal_path)?;
            let keep = complete_prefix_len(&journal_path)?;
            let f = OpenOptions::new().write(true).open(&journal_path).map_err(io_err(&journal_path))?;
            f.set_len(keep).map_err(io_err(&journal_path))?;
            records
        } else {
            Vec::new()
        };
        let open = |p: &Path| OpenOptions::new().create(true).append(true).open(p).map_err(io_err(p));
        let journal = open(&journal_path)?;
        let provenance = open(&dir.join(PROVENANCE_FILE))?;
        Ok((JournalWriter { journal, provenance, path: journal_path }, existing))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &TranslationRecord, provenance: &Provenance) -> Result<(), RunnerError> {
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        self.journal.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        self.journal.flush().map_err(io_err(&self.path))?;
        let mut line = serde_json::to_string(provenance).expect("provenance serializes");
        line.push('\n');
        self.provenance.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(run: usize, id: usize) -> TranslationRecord {
        TranslationRecord {
            run,
            segment_id: id,
            direction: "de-en".into(),
            source: format!("s{id}"),
            reference: format!("r{id}"),
            raw: format!("r{id}"),
            text: format!("r{id}"),
            ..TranslationRecord::default()
        }
    }

    fn prov(run: usize, id: usize) -> Provenance {
        Provenance { run, segment_id: id, cached: false, latency_ms: 1, attempt_count: 1 }
    }

    #[test]
    fn append_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let (mut w, existing) = JournalWriter::open(dir.path(), "abc").unwrap();
        assert!(existing.is_empty());
        w.append(&rec(0, 0), &prov(0, 0)).unwrap();
        w.append(&rec(0, 1), &prov(0, 1)).unwrap();
        drop(w);
        let (_, existing) = JournalWriter::open(dir.path(), "abc").unwrap();
        assert_eq!(existing, vec![rec(0, 0), rec(0, 1)]);
    }

    #[test]
    fn digest_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        JournalWriter::open(dir.path(), "abc").unwrap();
        assert!(matches!(JournalWriter::open(dir.path(), "xyz"), Err(RunnerError::ConfigChanged { .. })));
    }

    #[test]
    fn torn_line_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let (mut w, _) = JournalWriter::open(dir.path(), "abc").unwrap();
        w.append(&rec(0, 0), &prov(0, 0)).unwrap();
        drop(w);
        let path = dir.path().join(JOURNAL_FILE);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"run\":0,\"segm").unwrap();
        drop(f);
        assert_eq!(read_journal(&path).unwrap().len(), 1);
        let (mut w, existing) = JournalWriter::open(dir.path(), "abc").unwrap();
        assert_eq!(existing.len(), 1);
        w.append(&rec(0, 1), &prov(0, 1)).unwrap();
        drop(w);
        assert_eq!(read_journal(dir.path()).unwrap(), vec![rec(0, 0), rec(0, 1)]);
    }

    #[test]
    fn corrupt_line_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(JOURNAL_FILE);
        fs::write(&path, "not json\n").unwrap();
        assert!(matches!(read_journal(&path), Err(RunnerError::Journal { .. })));
    }
}
