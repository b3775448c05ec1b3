use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::ClientError;
use crate::types::Sample;

/// One line of the transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    /// SHA-256 of the canonical request body.
    pub hash: String,
    pub prompt: String,
    /// Request body minus the prompt: model, temperature, max_tokens, stop, seed.
    pub params: serde_json::Value,
    /// Completion text returned by the endpoint.
    pub response: String,
    /// Samples parsed greedily from the start of `response`.
    pub parsed: Vec<Sample>,
    /// Unix seconds.
    pub ts: u64,
    /// Base URL and model that served the request.
    #[serde(default)]
    pub endpoint: String,
}

/// Append-only request cache backed by a JSON-lines file.
#[derive(Debug, Default)]
pub struct TranscriptCache {
    inner: Mutex<CacheState>,
}

#[derive(Debug, Default)]
struct CacheState {
    records: HashMap<String, TranscriptRecord>,
    file: Option<(PathBuf, File)>,
}

impl TranscriptCache {
    /// A cache that lives only in memory.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open (or create) a transcript file and index its records by hash.
    pub fn open(path: &Path) -> Result<Self, ClientError> {
        let io = |e: std::io::Error| ClientError::Cache(format!("{}: {e}", path.display()));
        let mut records = HashMap::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path).map_err(io)?).lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: TranscriptRecord = serde_json::from_str(&line)
                    .map_err(|e| ClientError::Cache(format!("{} line {}: {e}", path.display(), i + 1)))?;
                records.entry(rec.hash.clone()).or_insert(rec);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(Self {
            inner: Mutex::new(CacheState {
                records,
                file: Some((path.to_path_buf(), file)),
            }),
        })
    }

    pub fn get(&self, hash: &str) -> Option<TranscriptRecord> {
        self.inner.lock().expect("cache lock").records.get(hash).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record a response. The line is written and flushed under the lock so
    /// concurrent writers never interleave.
    pub fn insert(&self, record: TranscriptRecord) -> Result<(), ClientError> {
        let mut state = self.inner.lock().expect("cache lock");
        if let Some((path, file)) = state.file.as_mut() {
            let mut line = serde_json::to_string(&record).map_err(|e| ClientError::Cache(e.to_string()))?;
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| ClientError::Cache(format!("{}: {e}", path.display())))?;
        }
        state.records.entry(record.hash.clone()).or_insert(record);
        Ok(())
    }
}
