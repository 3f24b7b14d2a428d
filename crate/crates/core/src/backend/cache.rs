//! Content-addressed replay cache: `<dir>/<first 2 hex>/<digest>.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{cache_key, Backend, BackendError, CacheDigest, DecodeParams, ModelRequest, ModelResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub digest: String,
    pub model_name: String,
    pub prompt_template_id: String,
    pub prompt: String,
    pub question_id: String,
    pub view_index: Option<u32>,
    pub decode: DecodeParams,
    pub raw_text: String,
}

#[derive(Debug, Clone)]
pub struct ReplayCache {
    dir: PathBuf,
}

impl ReplayCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| BackendError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, digest: &CacheDigest) -> PathBuf {
        let hex = digest.to_hex();
        self.dir.join(&hex[..2]).join(format!("{hex}.json"))
    }

    pub fn get(&self, digest: &CacheDigest) -> Result<Option<CacheEntry>, BackendError> {
        let path = self.path_for(digest);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| BackendError::Cache(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(BackendError::Cache(format!("{}: {e}", path.display()))),
        }
    }

    /// Writes through a temp file in the shard directory, then renames into
    /// place. Concurrent writers of one key race benignly (same content).
    pub fn put(&self, digest: &CacheDigest, entry: &CacheEntry) -> Result<(), BackendError> {
        let path = self.path_for(digest);
        let shard = path.parent().expect("sharded path");
        let cache_err = |e: &dyn std::fmt::Display| BackendError::Cache(format!("{}: {e}", path.display()));
        fs::create_dir_all(shard).map_err(|e| cache_err(&e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(shard).map_err(|e| cache_err(&e))?;
        let mut json = serde_json::to_vec_pretty(entry).map_err(|e| cache_err(&e))?;
        json.push(b'\n');
        tmp.write_all(&json).map_err(|e| cache_err(&e))?;
        tmp.persist(&path).map_err(|e| cache_err(&e))?;
        Ok(())
    }
}

/// Serves hits from the cache and records misses after asking `inner`.
pub struct CachedBackend<B> {
    inner: B,
    cache: ReplayCache,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, cache: ReplayCache) -> Self {
        Self {
            inner,
            cache,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn infer(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        let digest = cache_key(req, self.inner.model_name());
        if let Some(entry) = self.cache.get(&digest)? {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(ModelResponse {
                raw_text: entry.raw_text,
                latency_ms: 0,
                attempt_count: 0,
                from_cache: true,
            });
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let resp = self.inner.infer(req)?;
        let entry = CacheEntry {
            digest: digest.to_hex(),
            model_name: self.inner.model_name().to_string(),
            prompt_template_id: req.prompt_template_id.clone(),
            prompt: req.prompt.clone(),
            question_id: req.question_id.clone(),
            view_index: req.view_index,
            decode: req.decode,
            raw_text: resp.raw_text.clone(),
        };
        self.cache.put(&digest, &entry)?;
        Ok(resp)
    }
}

/// Inner backend for replay-only runs: every miss is an error.
pub struct ReplayOnly {
    model_name: String,
}

impl ReplayOnly {
    pub fn new(model_name: impl Into<String>) -> Self {
        Self {
            model_name: model_name.into(),
        }
    }
}

impl Backend for ReplayOnly {
    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn infer(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        Err(BackendError::Cache(format!(
            "no cached response for {} view {:?} (replay-only backend)",
            req.question_id, req.view_index
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::test_support::request;
    use crate::backend::StubBackend;

    #[test]
    fn second_identical_request_is_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let stub = StubBackend::constant("stub", "Answer: B");
        let cached = CachedBackend::new(&stub, ReplayCache::open(dir.path()).unwrap());
        let req = request(vec![1, 2, 3], "p");
        let cold = cached.infer(&req).unwrap();
        let warm = cached.infer(&req).unwrap();
        assert_eq!(cold.raw_text, warm.raw_text);
        assert!(!cold.from_cache);
        assert!(warm.from_cache);
        assert_eq!(stub.calls(), 1);
        assert_eq!((cached.hits(), cached.misses()), (1, 1));

        let digest = cache_key(&req, "stub");
        let path = cached.cache.path_for(&digest);
        let hex = digest.to_hex();
        assert!(path.ends_with(format!("{}/{hex}.json", &hex[..2])));
        assert!(path.exists());
    }

    #[test]
    fn replay_only_misses_fail_and_hits_succeed() {
        let dir = tempfile::tempdir().unwrap();
        let req = request(vec![4], "p");
        {
            let stub = StubBackend::constant("m", "yes");
            CachedBackend::new(&stub, ReplayCache::open(dir.path()).unwrap()).infer(&req).unwrap();
        }
        let replay = CachedBackend::new(ReplayOnly::new("m"), ReplayCache::open(dir.path()).unwrap());
        assert_eq!(replay.infer(&req).unwrap().raw_text, "yes");
        assert!(matches!(replay.infer(&request(vec![5], "p")), Err(BackendError::Cache(_))));
    }

    #[test]
    fn corrupt_entry_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReplayCache::open(dir.path()).unwrap();
        let digest = CacheDigest([7; 32]);
        let path = cache.path_for(&digest);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, "{").unwrap();
        assert!(matches!(cache.get(&digest), Err(BackendError::Cache(_))));
    }
}
