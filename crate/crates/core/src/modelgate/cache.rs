use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CanonicalRequest, GateError, RequestHash};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub text: String,
    pub finish_reason: String,
}

/// On-disk body: the canonical request followed by the response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request: CanonicalRequest,
    pub response: CachedResponse,
}

/// Directory of `<sha256-hex>.json` files. Entries are write-once.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
    tmp_counter: AtomicU64,
}

impl ResponseCache {
    pub fn open(dir: PathBuf) -> Result<Self, GateError> {
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            write_lock: Mutex::new(()),
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, hash: &RequestHash) -> PathBuf {
        self.dir.join(format!("{}.json", hash.to_hex()))
    }

    pub fn contains(&self, hash: &RequestHash) -> bool {
        self.path_for(hash).exists()
    }

    pub fn get(&self, hash: &RequestHash) -> Result<Option<CacheEntry>, GateError> {
        let path = self.path_for(hash);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let entry: CacheEntry = serde_json::from_slice(&bytes).map_err(|e| {
            GateError::CacheIo(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("{}: {e}", path.display()),
            ))
        })?;
        if entry.request.hash() != *hash {
            return Err(GateError::CacheIo(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("{}: body does not match its name", path.display()),
            )));
        }
        Ok(Some(entry))
    }

    /// Store a response. Re-storing an identical response is a no-op; a
    /// different response under the same hash is a [`GateError::CacheConflict`].
    pub fn put(
        &self,
        hash: &RequestHash,
        request: &CanonicalRequest,
        response: &CachedResponse,
    ) -> Result<(), GateError> {
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(existing) = self.get(hash)? {
            return if existing.response == *response {
                Ok(())
            } else {
                Err(GateError::CacheConflict(hash.to_hex()))
            };
        }
        let entry = CacheEntry {
            request: request.clone(),
            response: response.clone(),
        };
        let mut body = serde_json::to_vec_pretty(&entry).expect("cache entry serializes");
        body.push(b'\n');

        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = self
            .dir
            .join(format!(".{}.{}.{n}.tmp", hash.to_hex(), std::process::id()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&body)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.path_for(hash))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(user: &str) -> CanonicalRequest {
        CanonicalRequest {
            model_id: "m".into(),
            system: "s".into(),
            user: user.into(),
            temperature: 0.0,
            max_output_tokens: 16,
        }
    }

    fn resp(text: &str) -> CachedResponse {
        CachedResponse {
            text: text.into(),
            finish_reason: "stop".into(),
        }
    }

    #[test]
    fn write_once_semantics() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path().to_path_buf()).unwrap();
        let r = req("hello");
        let h = r.hash();
        assert!(cache.get(&h).unwrap().is_none());
        cache.put(&h, &r, &resp("A")).unwrap();
        cache.put(&h, &r, &resp("A")).unwrap();
        assert!(matches!(
            cache.put(&h, &r, &resp("B")),
            Err(GateError::CacheConflict(_))
        ));
        let got = cache.get(&h).unwrap().unwrap();
        assert_eq!(got.response.text, "A");
        assert_eq!(got.request, r);
        let files: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(files.len(), 1);
    }

    #[test]
    fn tampered_entry_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path().to_path_buf()).unwrap();
        let a = req("a");
        let b = req("b");
        cache.put(&a.hash(), &a, &resp("x")).unwrap();
        fs::copy(
            dir.path().join(format!("{}.json", a.hash())),
            dir.path().join(format!("{}.json", b.hash())),
        )
        .unwrap();
        assert!(cache.get(&b.hash()).is_err());
    }

    #[test]
    fn concurrent_puts_of_same_key() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path().to_path_buf()).unwrap();
        let r = req("race");
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| cache.put(&r.hash(), &r, &resp("same")).unwrap());
            }
        });
        assert_eq!(cache.get(&r.hash()).unwrap().unwrap().response.text, "same");
    }
}
