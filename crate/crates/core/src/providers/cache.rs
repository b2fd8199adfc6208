//! Persistent response store shared by the cache and the fixture backend.
//!
//! Layout: `<dir>/<first two hex digits>/<sha256>.json`, one record per
//! request. Records carry a checksum over their response; a record that fails
//! to parse or verify is reported as corrupt and rewritten on the next store.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, ProviderError, ProviderRequest, ProviderResponse};

/// Namespace under which frozen fixtures are keyed.
pub const FIXTURE_NAMESPACE: &str = "fixture";

#[derive(Serialize)]
struct KeyMaterial<'a> {
    namespace: &'a str,
    request: &'a ProviderRequest,
}

/// Hex SHA-256 over the canonical JSON of `(namespace, request)`.
pub fn request_digest(namespace: &str, request: &ProviderRequest) -> String {
    let canonical =
        serde_json::to_vec(&KeyMaterial { namespace, request }).expect("requests always serialize");
    hex::encode(Sha256::digest(canonical))
}

fn response_checksum(response: &ProviderResponse) -> String {
    hex::encode(Sha256::digest(
        serde_json::to_vec(response).expect("responses always serialize"),
    ))
}

#[derive(Debug, Serialize, Deserialize)]
struct StoredRecord {
    key: String,
    namespace: String,
    request: ProviderRequest,
    response: ProviderResponse,
    created_at: u64,
    checksum: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lookup {
    Hit(ProviderResponse),
    Miss,
    Corrupt(String),
}

#[derive(Debug)]
pub struct CacheStore {
    dir: PathBuf,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl CacheStore {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            key_locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, namespace: &str, request: &ProviderRequest) -> Lookup {
        let key = request_digest(namespace, request);
        let path = self.path_for(&key);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Lookup::Miss,
            Err(e) => return Lookup::Corrupt(format!("{}: {e}", path.display())),
        };
        let record: StoredRecord = match serde_json::from_slice(&bytes) {
            Ok(r) => r,
            Err(e) => return Lookup::Corrupt(format!("{}: {e}", path.display())),
        };
        if record.key != key
            || request_digest(&record.namespace, &record.request) != key
            || response_checksum(&record.response) != record.checksum
        {
            return Lookup::Corrupt(format!("{}: checksum mismatch", path.display()));
        }
        Lookup::Hit(record.response)
    }

    /// Writes atomically via a temporary file in the target directory.
    pub fn put(
        &self,
        namespace: &str,
        request: &ProviderRequest,
        response: &ProviderResponse,
    ) -> std::io::Result<()> {
        let key = request_digest(namespace, request);
        let path = self.path_for(&key);
        let parent = path.parent().expect("record paths have a parent");
        std::fs::create_dir_all(parent)?;
        let record = StoredRecord {
            key: key.clone(),
            namespace: namespace.to_owned(),
            request: request.clone(),
            response: response.clone(),
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            checksum: response_checksum(response),
        };
        let mut tmp = tempfile_in(parent, &key)?;
        serde_json::to_writer_pretty(&mut tmp.1, &record).map_err(std::io::Error::other)?;
        tmp.1.write_all(b"\n")?;
        tmp.1.sync_all()?;
        drop(tmp.1);
        std::fs::rename(&tmp.0, &path)
    }

    pub(crate) fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        let mut locks = self.key_locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(key.to_owned()).or_default().clone()
    }
}

fn tempfile_in(dir: &Path, key: &str) -> std::io::Result<(PathBuf, std::fs::File)> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let path = dir.join(format!(".{key}.{}.{n}.tmp", std::process::id()));
    let file = std::fs::File::create(&path)?;
    Ok((path, file))
}

/// Serves repeated requests from a [`CacheStore`], calling `inner` on misses.
pub struct CachedBackend {
    inner: Arc<dyn Backend>,
    store: Arc<CacheStore>,
    namespace: String,
}

impl CachedBackend {
    /// Keys entries under the inner backend's name.
    pub fn new(inner: Arc<dyn Backend>, store: Arc<CacheStore>) -> Self {
        let namespace = inner.name().to_owned();
        Self::with_namespace(inner, store, namespace)
    }

    /// Keys entries under `namespace`; [`FIXTURE_NAMESPACE`] turns the cache
    /// into a fixture recorder.
    pub fn with_namespace(
        inner: Arc<dyn Backend>,
        store: Arc<CacheStore>,
        namespace: impl Into<String>,
    ) -> Self {
        Self {
            inner,
            store,
            namespace: namespace.into(),
        }
    }
}

impl Backend for CachedBackend {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn call(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let key = request_digest(&self.namespace, request);
        let lock = self.store.key_lock(&key);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        match self.store.get(&self.namespace, request) {
            Lookup::Hit(r) => return Ok(r),
            Lookup::Miss => {}
            Lookup::Corrupt(why) => log::warn!("cache entry corrupt, recomputing: {why}"),
        }
        let response = self.inner.call(request)?;
        if let Err(e) = self.store.put(&self.namespace, request, &response) {
            log::warn!("could not persist cache entry {key}: {e}");
        }
        Ok(response)
    }
}

#[derive(Debug, Deserialize)]
struct FixtureLine {
    request: ProviderRequest,
    response: ProviderResponse,
}

enum FixtureSource {
    Store(Arc<CacheStore>),
    Memory(HashMap<ProviderRequest, ProviderResponse>),
}

/// Replays frozen responses; anything not recorded is [`ProviderError::Uncached`].
pub struct FixtureBackend {
    source: FixtureSource,
}

impl FixtureBackend {
    pub fn from_store(store: Arc<CacheStore>) -> Self {
        Self {
            source: FixtureSource::Store(store),
        }
    }

    pub fn from_pairs(
        pairs: impl IntoIterator<Item = (ProviderRequest, ProviderResponse)>,
    ) -> Self {
        Self {
            source: FixtureSource::Memory(pairs.into_iter().collect()),
        }
    }

    /// A store directory, or a JSON-lines file of `{"request": .., "response": ..}`.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if path.is_dir() {
            return Ok(Self::from_store(Arc::new(CacheStore::open(path)?)));
        }
        let file = std::fs::File::open(path)?;
        let mut pairs = HashMap::new();
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureLine = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}:{}: {e}", path.display(), n + 1),
                )
            })?;
            pairs.insert(entry.request, entry.response);
        }
        Ok(Self {
            source: FixtureSource::Memory(pairs),
        })
    }
}

impl Backend for FixtureBackend {
    fn name(&self) -> &str {
        FIXTURE_NAMESPACE
    }

    fn call(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        match &self.source {
            FixtureSource::Memory(map) => map
                .get(request)
                .cloned()
                .ok_or_else(|| ProviderError::Uncached(request.to_string())),
            FixtureSource::Store(store) => match store.get(FIXTURE_NAMESPACE, request) {
                Lookup::Hit(r) => Ok(r),
                Lookup::Miss => Err(ProviderError::Uncached(request.to_string())),
                Lookup::Corrupt(why) => {
                    Err(ProviderError::Unavailable(format!("corrupt fixture {why}")))
                }
            },
        }
    }
}
