//! JSON request transports: live HTTP with retries, and a record/replay
//! cache keyed by request hash.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::GatewayError;

/// Something that can answer a JSON POST (or GET) against a path such as
/// `/fill`, `/embed` or `/translate`.
pub trait Transport: Send + Sync {
    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError>;

    fn get(&self, path: &str) -> Result<Value, GatewayError> {
        Err(GatewayError::Protocol(format!("GET {path} not supported by this transport")))
    }

    /// Human-readable origin, used in error messages.
    fn describe(&self) -> String;
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, base_delay: Duration::from_millis(200), timeout: Duration::from_secs(30) }
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct InflightCap {
    available: Mutex<usize>,
    freed: Condvar,
}

impl InflightCap {
    fn new(cap: usize) -> Self {
        InflightCap { available: Mutex::new(cap.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> InflightGuard<'_> {
        let mut n = self.available.lock().expect("inflight lock");
        while *n == 0 {
            n = self.freed.wait(n).expect("inflight lock");
        }
        *n -= 1;
        InflightGuard { cap: self }
    }
}

struct InflightGuard<'a> {
    cap: &'a InflightCap,
}

impl Drop for InflightGuard<'_> {
    fn drop(&mut self) {
        *self.cap.available.lock().expect("inflight lock") += 1;
        self.cap.freed.notify_one();
    }
}

pub struct HttpTransport {
    base_url: String,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
    inflight: InflightCap,
}

impl HttpTransport {
    pub fn new(base_url: &str, retry: RetryPolicy, max_inflight: usize) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(retry.timeout)
            .build()
            .map_err(|e| GatewayError::Protocol(format!("building HTTP client: {e}")))?;
        Ok(HttpTransport {
            base_url: base_url.trim_end_matches('/').to_string(),
            client,
            retry,
            inflight: InflightCap::new(max_inflight),
        })
    }

    fn send(
        &self,
        path: &str,
        build: impl Fn(&str) -> reqwest::blocking::RequestBuilder,
    ) -> Result<Value, GatewayError> {
        let url = format!("{}{}", self.base_url, path);
        let _slot = self.inflight.acquire();
        let mut last = String::new();
        for attempt in 0..=self.retry.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt - 1));
            }
            match build(&url).send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_server_error() {
                        last = format!("HTTP {status}");
                        continue;
                    }
                    let text = resp.text().map_err(|e| GatewayError::Protocol(format!("reading {url}: {e}")))?;
                    if !status.is_success() {
                        return Err(GatewayError::Protocol(format!("{url} returned {status}: {text}")));
                    }
                    return serde_json::from_str(&text)
                        .map_err(|e| GatewayError::Protocol(format!("{url} returned invalid JSON: {e}")));
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(GatewayError::Unreachable { endpoint: url, attempts: self.retry.max_retries + 1, message: last })
    }
}

impl Transport for HttpTransport {
    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        self.send(path, |url| self.client.post(url).json(body))
    }

    fn get(&self, path: &str) -> Result<Value, GatewayError> {
        self.send(path, |url| self.client.get(url))
    }

    fn describe(&self) -> String {
        self.base_url.clone()
    }
}

/// Stable hash of a request: SHA-256 over the path and the canonical
/// (key-sorted) JSON body.
pub fn request_key(path: &str, body: &Value) -> String {
    let mut h = Sha256::new();
    h.update(path.as_bytes());
    h.update(b"\n");
    h.update(serde_json::to_string(body).expect("JSON value serializes").as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub key: String,
    pub path: String,
    pub request: Value,
    pub response: Value,
}

/// In-memory view of a replay cache file (JSONL of [`ReplayEntry`]).
#[derive(Debug, Clone, Default)]
pub struct ReplayCache {
    entries: HashMap<String, ReplayEntry>,
}

impl ReplayCache {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| GatewayError::io(path, e))?;
        let mut entries = HashMap::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| GatewayError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReplayEntry = serde_json::from_str(&line).map_err(|e| {
                GatewayError::Protocol(format!("{}:{}: bad replay entry: {e}", path.display(), idx + 1))
            })?;
            entries.insert(entry.key.clone(), entry);
        }
        Ok(ReplayCache { entries })
    }

    pub fn lookup(&self, path: &str, body: &Value) -> Option<&Value> {
        self.entries.get(&request_key(path, body)).map(|e| &e.response)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub struct ReplayTransport {
    source: PathBuf,
    cache: ReplayCache,
}

impl ReplayTransport {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        Ok(ReplayTransport { source: path.to_path_buf(), cache: ReplayCache::load(path)? })
    }
}

impl Transport for ReplayTransport {
    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        self.cache
            .lookup(path, body)
            .cloned()
            .ok_or_else(|| GatewayError::ReplayMiss { key: request_key(path, body), path: path.to_string() })
    }

    fn describe(&self) -> String {
        format!("replay:{}", self.source.display())
    }
}

/// Appends request/response pairs to a replay cache file.
pub struct ReplayRecorder {
    path: PathBuf,
    writer: Mutex<File>,
}

impl ReplayRecorder {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| GatewayError::io(path, e))?;
        Ok(ReplayRecorder { path: path.to_path_buf(), writer: Mutex::new(file) })
    }

    pub fn record(&self, path: &str, request: &Value, response: &Value) -> Result<(), GatewayError> {
        let entry = ReplayEntry {
            key: request_key(path, request),
            path: path.to_string(),
            request: request.clone(),
            response: response.clone(),
        };
        let line = serde_json::to_string(&entry).expect("replay entry serializes");
        let mut w = self.writer.lock().expect("recorder lock");
        writeln!(w, "{line}").map_err(|e| GatewayError::io(&self.path, e))
    }
}

/// Forwards to an inner transport and records every successful exchange.
pub struct RecordingTransport<T> {
    inner: T,
    recorder: ReplayRecorder,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, cache_path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        Ok(RecordingTransport { inner, recorder: ReplayRecorder::create(cache_path)? })
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let response = self.inner.post(path, body)?;
        self.recorder.record(path, body, &response)?;
        Ok(response)
    }

    fn get(&self, path: &str) -> Result<Value, GatewayError> {
        self.inner.get(path)
    }

    fn describe(&self) -> String {
        format!("record({})", self.inner.describe())
    }
}
