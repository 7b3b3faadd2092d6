//! Durable record storage.
//!
//! `records.jsonl` is an append-only log of `put` and `remove` operations;
//! replaying it rebuilds the key index. `repositories.json` holds source
//! state and is replaced atomically (write to a temporary file, then rename)
//! only after a harvest has completed, so an interrupted harvest leaves the
//! previous watermark in place.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::{SourceRepository, StoredRecord};

pub const RECORD_LOG: &str = "records.jsonl";
pub const REPOSITORY_FILE: &str = "repositories.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage directory {0} does not exist")]
    MissingDir(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: corrupt log entry: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
enum LogEntry {
    Put(StoredRecord),
    Remove {
        identifier: String,
        prefix: String,
        source: String,
    },
}

pub type Key = (String, String);

#[derive(Debug, Default)]
pub struct Store {
    dir: Option<PathBuf>,
    log: Option<File>,
    /// Every version held for a key, at most one per source.
    records: BTreeMap<Key, Vec<StoredRecord>>,
    repos: BTreeMap<String, SourceRepository>,
    generation: u64,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

impl Store {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or initialises) the store in an existing directory.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        if !dir.is_dir() {
            return Err(StoreError::MissingDir(dir.to_owned()));
        }
        let mut store = Store {
            dir: Some(dir.to_owned()),
            ..Store::default()
        };

        let repo_path = dir.join(REPOSITORY_FILE);
        if repo_path.exists() {
            let text = fs::read_to_string(&repo_path).map_err(io_err(&repo_path))?;
            let repos: Vec<SourceRepository> =
                serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
                    path: repo_path.clone(),
                    line: e.line(),
                    message: e.to_string(),
                })?;
            store.repos = repos.into_iter().map(|r| (r.id.clone(), r)).collect();
        }

        let log_path = dir.join(RECORD_LOG);
        if log_path.exists() {
            let file = File::open(&log_path).map_err(io_err(&log_path))?;
            let lines: Vec<String> = BufReader::new(file)
                .lines()
                .collect::<Result<_, _>>()
                .map_err(io_err(&log_path))?;
            let last = lines.len();
            let mut torn = false;
            for (n, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<LogEntry>(line) {
                    Ok(entry) => store.apply(entry),
                    // A torn final line is what a crash mid-append leaves.
                    Err(_) if n + 1 == last => {
                        torn = true;
                        tracing::warn!("{}: ignoring torn final entry", log_path.display());
                    }
                    Err(e) => {
                        return Err(StoreError::Corrupt {
                            path: log_path,
                            line: n + 1,
                            message: e.to_string(),
                        })
                    }
                }
            }
            if torn {
                // Rewrite without the tail so new entries start on a fresh line.
                let mut clean = lines[..last - 1].join("\n");
                clean.push('\n');
                let tmp = dir.join(format!("{RECORD_LOG}.tmp"));
                fs::write(&tmp, clean).map_err(io_err(&tmp))?;
                fs::rename(&tmp, &log_path).map_err(io_err(&log_path))?;
            }
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io_err(&log_path))?;
        store.log = Some(log);
        Ok(store)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn apply(&mut self, entry: LogEntry) {
        self.generation += 1;
        match entry {
            LogEntry::Put(rec) => {
                let versions = self.records.entry(rec.key()).or_default();
                match versions.iter_mut().find(|v| v.source == rec.source) {
                    Some(slot) => *slot = rec,
                    None => versions.push(rec),
                }
            }
            LogEntry::Remove {
                identifier,
                prefix,
                source,
            } => {
                let key = (identifier, prefix);
                if let Some(versions) = self.records.get_mut(&key) {
                    versions.retain(|v| v.source != source);
                    if versions.is_empty() {
                        self.records.remove(&key);
                    }
                }
            }
        }
    }

    fn append(&mut self, entry: &LogEntry) -> Result<(), StoreError> {
        if let (Some(log), Some(dir)) = (self.log.as_mut(), self.dir.as_ref()) {
            let mut line = serde_json::to_vec(entry).expect("log entry serializes");
            line.push(b'\n');
            log.write_all(&line)
                .map_err(io_err(&dir.join(RECORD_LOG)))?;
        }
        Ok(())
    }

    /// Stores `rec`, replacing any version from the same source.
    pub fn put(&mut self, rec: StoredRecord) -> Result<(), StoreError> {
        let entry = LogEntry::Put(rec);
        self.append(&entry)?;
        self.apply(entry);
        Ok(())
    }

    pub fn remove(&mut self, key: &Key, source: &str) -> Result<(), StoreError> {
        let entry = LogEntry::Remove {
            identifier: key.0.clone(),
            prefix: key.1.clone(),
            source: source.to_owned(),
        };
        self.append(&entry)?;
        self.apply(entry);
        Ok(())
    }

    pub fn versions(&self, key: &Key) -> &[StoredRecord] {
        self.records.get(key).map_or(&[], Vec::as_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = &Key> {
        self.records.keys()
    }

    pub fn all_versions(&self) -> impl Iterator<Item = &StoredRecord> {
        self.records.values().flatten()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Key, &Vec<StoredRecord>)> {
        self.records.iter()
    }

    pub fn record_count(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn repos(&self) -> impl Iterator<Item = &SourceRepository> {
        self.repos.values()
    }

    pub fn repo(&self, id: &str) -> Option<&SourceRepository> {
        self.repos.get(id)
    }

    /// Replaces a repository's state and persists the repository file.
    pub fn save_repo(&mut self, repo: SourceRepository) -> Result<(), StoreError> {
        self.repos.insert(repo.id.clone(), repo);
        self.write_repos()
    }

    fn write_repos(&self) -> Result<(), StoreError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(REPOSITORY_FILE);
        let tmp = dir.join(format!("{REPOSITORY_FILE}.tmp"));
        let repos: Vec<&SourceRepository> = self.repos.values().collect();
        let text = serde_json::to_string_pretty(&repos).expect("repositories serialize");
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(text.as_bytes()).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    /// Forces the record log to disk.
    pub fn sync(&mut self) -> Result<(), StoreError> {
        if let (Some(log), Some(dir)) = (self.log.as_mut(), self.dir.as_ref()) {
            log.sync_all().map_err(io_err(&dir.join(RECORD_LOG)))?;
        }
        Ok(())
    }

    /// Appends half of a log line, as a process killed mid-write would.
    pub fn write_torn_tail(&mut self) -> Result<(), StoreError> {
        if let (Some(log), Some(dir)) = (self.log.as_mut(), self.dir.as_ref()) {
            log.write_all(b"{\"put\":{\"identifier\":\"")
                .map_err(io_err(&dir.join(RECORD_LOG)))?;
        }
        Ok(())
    }

    /// Every stored version in key order, for comparing two stores.
    pub fn snapshot(&self) -> Vec<StoredRecord> {
        self.all_versions().cloned().collect()
    }
}
