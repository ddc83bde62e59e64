//! Append-only JSONL cache of model replies keyed by a content hash.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::PromptRequest;
use crate::parse::LlmJudgment;
use crate::prompt::{PromptKind, TEMPLATE_VERSION};
use crate::LlmError;

/// One cached exchange. `judgment` is `None` when the reply could not be
/// parsed even after a reprompt; that outcome is cached too so reruns do not
/// pay for it again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub kind: PromptKind,
    pub judgment: Option<LlmJudgment>,
    pub raw: String,
    pub ts: u64,
}

/// Content hash over everything that determines a reply: the question, the
/// template wording, and who answers it.
pub fn cache_key(request: &PromptRequest, backend_id: &str) -> String {
    let mut h = Sha256::new();
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    field(request.kind.as_str().as_bytes());
    field(TEMPLATE_VERSION.as_bytes());
    field(backend_id.as_bytes());
    field(&(request.example_count as u64).to_le_bytes());
    field(&(request.texts.len() as u64).to_le_bytes());
    for t in &request.texts {
        field(t.as_bytes());
    }
    field(&(request.categories.len() as u64).to_le_bytes());
    for c in &request.categories {
        field(c.as_bytes());
    }
    // Label-aware mocks answer by node index, so the subjects matter as much as the text.
    if backend_id.starts_with("mock:") {
        for s in &request.subjects {
            field(&(*s as u64).to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Cache backed by a JSONL file (or purely in memory). Reads are concurrent;
/// appends go through a single writer.
#[derive(Debug)]
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, CacheEntry>>,
    writer: Mutex<Option<File>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self { path: None, entries: RwLock::new(HashMap::new()), writer: Mutex::new(None) }
    }

    /// Load `path` if it exists (later lines win) and open it for appending.
    pub fn open(path: &Path) -> Result<Self, LlmError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(&line)
                    .map_err(|e| LlmError::CacheFormat { line: n + 1, message: e.to_string() })?;
                entries.insert(entry.key.clone(), entry);
            }
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { path: Some(path.to_path_buf()), entries: RwLock::new(entries), writer: Mutex::new(Some(file)) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Persist then publish an entry. The first entry for a key wins so that
    /// concurrent misses on the same question cannot disagree.
    pub fn insert(&self, key: String, kind: PromptKind, judgment: Option<LlmJudgment>, raw: String) -> Result<CacheEntry, LlmError> {
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(existing) = self.get(&key) {
            return Ok(existing);
        }
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let entry = CacheEntry { key: key.clone(), kind, judgment, raw, ts };
        if let Some(file) = writer.as_mut() {
            let mut line = serde_json::to_string(&entry)?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        self.entries.write().unwrap_or_else(|e| e.into_inner()).insert(key, entry.clone());
        Ok(entry)
    }
}
