use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use super::LlmError;

/// Directory of raw response bodies, one file per request digest.
///
/// Writes go to a temporary file that is renamed into place, so concurrent
/// writers of the same key leave one complete body behind.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: &Path) -> Result<ResponseCache, LlmError> {
        fs::create_dir_all(dir).map_err(|source| LlmError::Cache { path: dir.to_path_buf(), source })?;
        Ok(ResponseCache { dir: dir.to_path_buf() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(key)
    }

    pub fn get(&self, key: &str) -> Result<Option<String>, LlmError> {
        let path = self.path(key);
        match fs::read_to_string(&path) {
            Ok(body) => Ok(Some(body)),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(source) => Err(LlmError::Cache { path, source }),
        }
    }

    pub fn put(&self, key: &str, body: &str) -> Result<(), LlmError> {
        let err = |source| LlmError::Cache { path: self.path(key), source };
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(err)?;
        tmp.write_all(body.as_bytes()).map_err(err)?;
        tmp.persist(self.path(key)).map_err(|e| err(e.error))?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|entries| {
                entries
                    .filter_map(Result::ok)
                    .filter(|e| {
                        e.file_name()
                            .to_str()
                            .is_some_and(|n| n.len() == 64 && n.bytes().all(|b| b.is_ascii_hexdigit()))
                    })
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
