use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{cache_key, ChatRequest, ChatResponse, Gateway, GatewayError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredResponse {
    pub text: String,
    pub backend_id: String,
}

/// One recorded exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub key_hash: String,
    pub request: ChatRequest,
    pub response: StoredResponse,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    entries: usize,
    content_hash: String,
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    manifest: Manifest,
}

struct Writer {
    out: BufWriter<File>,
    hasher: Sha256,
    entries: usize,
    finished: bool,
}

/// Append-only JSON-lines store of gateway traffic.
///
/// Each entry line is `{key_hash, request, response, timestamp}`. A trailing
/// manifest line `{"manifest": {entries, content_hash}}` carries the SHA-256
/// of every entry line (including its newline) in file order. Manifests that
/// are not the last line are left over from an earlier session and ignored.
pub struct RecordStore {
    path: PathBuf,
    writer: Mutex<Writer>,
}

impl RecordStore {
    /// Starts a fresh store, truncating any existing file.
    pub fn create(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let file = File::create(&path).map_err(io_err)?;
        Ok(RecordStore {
            path,
            writer: Mutex::new(Writer {
                out: BufWriter::new(file),
                hasher: Sha256::new(),
                entries: 0,
                finished: false,
            }),
        })
    }

    /// Continues an existing store (verified first), or creates one.
    pub fn open_append(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref().to_path_buf();
        if !path.exists() {
            return Self::create(path);
        }
        let (entries, lines) = Self::read_verified(&path)?;
        let mut hasher = Sha256::new();
        for line in &lines {
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        let file = OpenOptions::new().append(true).open(&path).map_err(io_err)?;
        Ok(RecordStore {
            path,
            writer: Mutex::new(Writer { out: BufWriter::new(file), hasher, entries: entries.len(), finished: false }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, request: &ChatRequest, response: &ChatResponse) -> Result<(), GatewayError> {
        let entry = RecordEntry {
            key_hash: cache_key(request),
            request: request.clone(),
            response: StoredResponse { text: response.text.clone(), backend_id: response.backend_id.clone() },
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        };
        let line = serde_json::to_string(&entry).map_err(|e| GatewayError::Io(e.to_string()))?;
        let mut w = self.writer.lock().unwrap();
        w.out.write_all(line.as_bytes()).map_err(io_err)?;
        w.out.write_all(b"\n").map_err(io_err)?;
        w.hasher.update(line.as_bytes());
        w.hasher.update(b"\n");
        w.entries += 1;
        w.finished = false;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.writer.lock().unwrap().entries
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the manifest line and flushes.
    pub fn finish(&self) -> Result<(), GatewayError> {
        let mut w = self.writer.lock().unwrap();
        if w.finished {
            return Ok(());
        }
        let manifest = ManifestLine {
            manifest: Manifest { entries: w.entries, content_hash: hex::encode(w.hasher.clone().finalize()) },
        };
        let line = serde_json::to_string(&manifest).expect("manifest serializes");
        w.out.write_all(line.as_bytes()).map_err(io_err)?;
        w.out.write_all(b"\n").map_err(io_err)?;
        w.out.flush().map_err(io_err)?;
        w.finished = true;
        Ok(())
    }

    /// Loads every entry after checking the manifest hash and each key.
    pub fn load(path: impl AsRef<Path>) -> Result<Vec<RecordEntry>, GatewayError> {
        Self::read_verified(path.as_ref()).map(|(entries, _)| entries)
    }

    fn read_verified(path: &Path) -> Result<(Vec<RecordEntry>, Vec<String>), GatewayError> {
        let file = File::open(path).map_err(io_err)?;
        let mut raw_lines = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(io_err)?;
            if !line.trim().is_empty() {
                raw_lines.push(line);
            }
        }
        let last =
            raw_lines.pop().ok_or_else(|| GatewayError::StoreCorrupt(format!("{}: empty store", path.display())))?;
        let manifest: ManifestLine = serde_json::from_str(&last)
            .map_err(|_| GatewayError::StoreCorrupt(format!("{}: missing trailing manifest", path.display())))?;

        let mut hasher = Sha256::new();
        let mut entries = Vec::new();
        let mut entry_lines = Vec::new();
        for (i, line) in raw_lines.into_iter().enumerate() {
            if serde_json::from_str::<ManifestLine>(&line).is_ok() {
                continue;
            }
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
            let entry: RecordEntry = serde_json::from_str(&line)
                .map_err(|e| GatewayError::StoreCorrupt(format!("{}: line {}: {e}", path.display(), i + 1)))?;
            if cache_key(&entry.request) != entry.key_hash {
                return Err(GatewayError::StoreCorrupt(format!(
                    "{}: line {}: key hash does not match request",
                    path.display(),
                    i + 1
                )));
            }
            entries.push(entry);
            entry_lines.push(line);
        }
        let digest = hex::encode(hasher.finalize());
        if digest != manifest.manifest.content_hash || entries.len() != manifest.manifest.entries {
            return Err(GatewayError::StoreCorrupt(format!(
                "{}: content hash mismatch (manifest {}, computed {digest})",
                path.display(),
                manifest.manifest.content_hash
            )));
        }
        Ok((entries, entry_lines))
    }
}

impl Drop for RecordStore {
    fn drop(&mut self) {
        let _ = self.finish();
    }
}

fn io_err(e: std::io::Error) -> GatewayError {
    GatewayError::Io(e.to_string())
}

/// Forwards to an inner gateway and appends every successful exchange to a store.
pub struct RecordingGateway<G> {
    inner: G,
    store: RecordStore,
}

impl<G: Gateway> RecordingGateway<G> {
    pub fn new(inner: G, store: RecordStore) -> Self {
        RecordingGateway { inner, store }
    }

    pub fn store(&self) -> &RecordStore {
        &self.store
    }

    pub fn finish(&self) -> Result<(), GatewayError> {
        self.store.finish()
    }
}

impl<G: Gateway> Gateway for RecordingGateway<G> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let resp = self.inner.complete(request)?;
        self.store.append(request, &resp)?;
        Ok(resp)
    }

    fn complete_batch(&self, requests: &[ChatRequest]) -> Vec<Result<ChatResponse, GatewayError>> {
        let results = self.inner.complete_batch(requests);
        results
            .into_iter()
            .zip(requests)
            .map(|(res, req)| {
                let resp = res?;
                self.store.append(req, &resp)?;
                Ok(resp)
            })
            .collect()
    }
}

/// Serves recorded responses by cache key.
///
/// Identical requests recorded several times are replayed in recording
/// order. In strict mode an unknown or exhausted key is a `CacheMiss`;
/// otherwise the request goes to the fallback gateway.
pub struct ReplayGateway {
    entries: HashMap<String, Vec<StoredResponse>>,
    cursors: Mutex<HashMap<String, usize>>,
    fallback: Option<Box<dyn Gateway>>,
    id: String,
}

impl ReplayGateway {
    pub fn strict(entries: Vec<RecordEntry>) -> Self {
        let mut map: HashMap<String, Vec<StoredResponse>> = HashMap::new();
        for e in entries {
            map.entry(e.key_hash).or_default().push(e.response);
        }
        ReplayGateway { entries: map, cursors: Mutex::new(HashMap::new()), fallback: None, id: "replay".into() }
    }

    pub fn from_store(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        Ok(Self::strict(RecordStore::load(path)?))
    }

    pub fn with_fallback(mut self, fallback: Box<dyn Gateway>) -> Self {
        self.fallback = Some(fallback);
        self
    }

    fn lookup(&self, key: &str) -> Option<StoredResponse> {
        let list = self.entries.get(key)?;
        let mut cursors = self.cursors.lock().unwrap();
        let cursor = cursors.entry(key.to_string()).or_insert(0);
        let hit = list.get(*cursor).cloned();
        if hit.is_some() {
            *cursor += 1;
        }
        hit
    }
}

impl Gateway for ReplayGateway {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let start = Instant::now();
        let key = cache_key(request);
        match self.lookup(&key) {
            Some(hit) => {
                Ok(ChatResponse { text: hit.text, backend_id: hit.backend_id, cached: true, latency: start.elapsed() })
            }
            None => match &self.fallback {
                Some(fb) => fb.complete(request),
                None => Err(GatewayError::CacheMiss { key }),
            },
        }
    }

    // Sequential so repeated identical requests consume recordings in order.
    fn complete_batch(&self, requests: &[ChatRequest]) -> Vec<Result<ChatResponse, GatewayError>> {
        requests.iter().map(|r| self.complete(r)).collect()
    }
}
