//! Append-only JSON-Lines embedding cache.
//!
//! Each line is `{"k": "<model_id>/<template_version>/<sha256 of text>", "v": [..]}`.
//! The whole file is loaded into memory on open; new entries are appended.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbeddingError, Result};

pub const CACHE_FILE_NAME: &str = "embeddings.jsonl";

#[derive(Serialize, Deserialize)]
struct Entry {
    k: String,
    v: Vec<f64>,
}

struct Inner {
    map: HashMap<String, Vec<f64>>,
    file: Option<File>,
}

pub struct EmbeddingCache {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for EmbeddingCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingCache")
            .field("path", &self.path)
            .field("entries", &self.len())
            .finish()
    }
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            inner: Mutex::new(Inner {
                map: HashMap::new(),
                file: None,
            }),
        }
    }

    /// Opens (or creates) `<dir>/embeddings.jsonl`.
    pub fn open_dir(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Self::open(&dir.join(CACHE_FILE_NAME))
    }

    pub fn open(path: &Path) -> Result<Self> {
        let mut map = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (lineno, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| {
                    EmbeddingError::CacheCorrupt(format!(
                        "{}: line {}: {e}",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: Entry = serde_json::from_str(&line).map_err(|e| {
                    EmbeddingError::CacheCorrupt(format!(
                        "{}: line {}: {e}",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                map.entry(entry.k).or_insert(entry.v);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(Inner {
                map,
                file: Some(file),
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn key(model_id: &str, template_version: &str, text: &str) -> String {
        format!(
            "{model_id}/{template_version}/{}",
            hex::encode(Sha256::digest(text.as_bytes()))
        )
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<Vec<f64>> {
        self.inner.lock().expect("cache lock").map.get(key).cloned()
    }

    /// Stores every absent key. Returns the stored value for each input key, which
    /// is the earlier value when another writer got there first.
    pub fn insert_many(&self, entries: Vec<(String, Vec<f64>)>) -> Result<Vec<(String, Vec<f64>)>> {
        let mut inner = self.inner.lock().expect("cache lock");
        let mut out = Vec::with_capacity(entries.len());
        let mut lines = String::new();
        for (k, v) in entries {
            if let Some(existing) = inner.map.get(&k) {
                out.push((k, existing.clone()));
                continue;
            }
            if inner.file.is_some() {
                let line = serde_json::to_string(&Entry {
                    k: k.clone(),
                    v: v.clone(),
                })
                .map_err(|e| EmbeddingError::CacheCorrupt(e.to_string()))?;
                lines.push_str(&line);
                lines.push('\n');
            }
            inner.map.insert(k.clone(), v.clone());
            out.push((k, v));
        }
        if let Some(f) = inner.file.as_mut() {
            if !lines.is_empty() {
                f.write_all(lines.as_bytes())?;
                f.flush()?;
            }
        }
        Ok(out)
    }

    pub fn insert(&self, key: String, value: Vec<f64>) -> Result<Vec<f64>> {
        Ok(self
            .insert_many(vec![(key, value)])?
            .pop()
            .expect("one entry")
            .1)
    }

    /// Returns the cached vector, or computes, stores and returns it. The lock is not
    /// held while `compute` runs, so racing callers may both compute; the first
    /// stored value wins and both receive it.
    pub fn get_or_compute<F>(&self, key: &str, compute: F) -> Result<Vec<f64>>
    where
        F: FnOnce() -> Result<Vec<f64>>,
    {
        if let Some(v) = self.get(key) {
            return Ok(v);
        }
        let v = compute()?;
        self.insert(key.to_string(), v)
    }
}
