//! Persistent response cache.
//!
//! Entries live in memory and, when a path is given, in an append-only JSONL
//! file that is replayed on open. Keys hash the model id together with the
//! full request content, so request ids never affect hits.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::protocol::{ScoreRequest, ScoreResponse};
use crate::error::Result;

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    response: ScoreResponse,
}

pub fn cache_key(model_id: &str, request: &ScoreRequest) -> String {
    let mut h = Sha256::new();
    h.update(model_id.as_bytes());
    for part in request.content_parts() {
        // Length-prefix each part so concatenations cannot collide.
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Default)]
pub struct ScoreCache {
    entries: RwLock<HashMap<String, ScoreResponse>>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ScoreCache {
    pub fn in_memory() -> ScoreCache {
        ScoreCache::default()
    }

    /// Opens (or creates) a cache file and replays its entries.
    pub fn open(path: impl AsRef<Path>) -> Result<ScoreCache> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheLine>(&line) {
                    Ok(entry) => {
                        entries.insert(entry.key, entry.response);
                    }
                    // A torn final line from an interrupted run is dropped.
                    Err(e) => log::warn!("{}:{}: skipping cache line: {e}", path.display(), n + 1),
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        let bytes = std::fs::read(path)?;
        if bytes.last().is_some_and(|b| *b != b'\n') {
            file.write_all(b"\n")?;
        }
        Ok(ScoreCache {
            entries: RwLock::new(entries),
            file: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<ScoreResponse> {
        let found = self.entries.read().expect("cache lock").get(key).cloned();
        let counter = if found.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        found
    }

    pub fn insert(&self, key: String, response: ScoreResponse) -> Result<()> {
        if let Some(file) = &self.file {
            let line = serde_json::to_string(&CacheLine {
                key: key.clone(),
                response: response.clone(),
            })?;
            let mut f = file.lock().expect("cache file lock");
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        self.entries.write().expect("cache lock").insert(key, response);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (hits, misses) since this cache was opened.
    pub fn stats(&self) -> (u64, u64) {
        (self.hits.load(Ordering::Relaxed), self.misses.load(Ordering::Relaxed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn response(x: f64) -> ScoreResponse {
        ScoreResponse {
            log_scores: vec![x; 5],
            truncated: false,
            model_id: "m".into(),
            protocol_version: None,
        }
    }

    #[test]
    fn key_ignores_request_id_but_not_content() {
        let a = ScoreRequest::sequence("a", vec!["x".into(); 5]);
        let b = ScoreRequest::sequence("b", vec!["x".into(); 5]);
        let c = ScoreRequest::sequence("a", vec!["y".into(); 5]);
        assert_eq!(cache_key("m", &a), cache_key("m", &b));
        assert_ne!(cache_key("m", &a), cache_key("m", &c));
        assert_ne!(cache_key("m", &a), cache_key("n", &a));
    }

    #[test]
    fn persists_across_reopen_and_skips_torn_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache/scores.jsonl");
        {
            let cache = ScoreCache::open(&path).unwrap();
            cache.insert("k1".into(), response(1.0)).unwrap();
            cache.insert("k2".into(), response(2.0)).unwrap();
        }
        std::fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .unwrap()
            .write_all(b"{\"key\":\"k3\",\"resp")
            .unwrap();
        let cache = ScoreCache::open(&path).unwrap();
        assert_eq!(cache.len(), 2);
        assert_eq!(cache.get("k2").unwrap().log_scores[0], 2.0);
        assert!(cache.get("k3").is_none());
        assert_eq!(cache.stats(), (1, 1));
    }

    #[test]
    fn concurrent_inserts() {
        let cache = ScoreCache::in_memory();
        std::thread::scope(|s| {
            for t in 0..8 {
                let cache = &cache;
                s.spawn(move || {
                    for i in 0..100 {
                        cache.insert(format!("{t}-{i}"), response(i as f64)).unwrap();
                        assert!(cache.get(&format!("{t}-{i}")).is_some());
                    }
                });
            }
        });
        assert_eq!(cache.len(), 800);
    }
}
