//! Uniform access to fill-in-the-blank scorers and sentence embedders.
//!
//! Four backend kinds share the [`MaskedScorer`] trait: a local n-gram
//! model, a background unigram table, a remote neural sidecar speaking the
//! JSON protocol below, and a replay cache of previously recorded sidecar
//! exchanges.
//!
//! ```text
//! POST /fill  {"text": "... [BLANK] ...", "candidates": [..]} -> {"probs": {..}, "model_tag": ".."}
//! POST /embed {"texts": [..]}                                 -> {"vectors": [[..]], "model_tag": ".."}
//! GET  /health
//! ```

pub mod transport;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::ngram::{single_token, BackgroundUnigrams, NGramModel, NgramError};
use crate::probe::{PromptSpec, BLANK};

pub use transport::{
    request_key, HttpTransport, RecordingTransport, ReplayCache, ReplayEntry, ReplayRecorder, ReplayTransport,
    RetryPolicy, Transport,
};

/// Floor applied to exact-zero probabilities so score ratios stay finite.
pub const PROB_FLOOR: f64 = 1e-12;

/// Pooling used by sidecar sentence embeddings; recorded in outputs.
pub const EMBEDDING_POOLING: &str = "mean";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{endpoint} unreachable after {attempts} attempt(s): {message}")]
    Unreachable { endpoint: String, attempts: u32, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no recorded response for {path} (request key {key})")]
    ReplayMiss { key: String, path: String },
    #[error("{kind} backends do not support {operation}")]
    Unsupported { kind: BackendKind, operation: &'static str },
    #[error("model tag mismatch: expected {expected:?}, backend reported {actual:?}")]
    ProvenanceMismatch { expected: String, actual: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ngram(#[from] NgramError),
}

impl GatewayError {
    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        GatewayError::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Transient failures that a caller may retry later.
    pub fn is_retriable(&self) -> bool {
        matches!(self, GatewayError::Unreachable { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Ngram,
    Unigram,
    NeuralRemote,
    Replay,
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackendKind::Ngram => "ngram",
            BackendKind::Unigram => "unigram",
            BackendKind::NeuralRemote => "neural_remote",
            BackendKind::Replay => "replay",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendRef {
    pub kind: BackendKind,
    pub endpoint_or_path: String,
    pub model_tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillResponse {
    pub prompt_id: String,
    pub probs: BTreeMap<String, f64>,
    pub model_tag: String,
    /// Candidates the backend vocabulary does not support, with a reason.
    /// A candidate may appear here and still carry a surrogate probability
    /// (e.g. the n-gram `<unk>` path).
    #[serde(default)]
    pub unsupported: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBatch {
    pub vectors: Vec<Vec<f64>>,
    pub model_tag: String,
    pub pooling: String,
}

pub trait MaskedScorer: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn model_tag(&self) -> &str;

    /// Raw fill probabilities. Callers normally go through
    /// [`fill_probabilities`], which validates and floors the result.
    fn fill(&self, prompt: &PromptSpec, candidates: &[String]) -> Result<FillResponse, GatewayError>;

    fn embed(&self, _texts: &[String]) -> Result<EmbeddingBatch, GatewayError> {
        Err(GatewayError::Unsupported { kind: self.kind(), operation: "embeddings" })
    }
}

/// Queries `backend` for the probability of each candidate in the blank.
///
/// Every requested candidate ends up either in `probs` or in
/// `unsupported`; exact zeros are raised to [`PROB_FLOOR`].
pub fn fill_probabilities(
    backend: &dyn MaskedScorer,
    prompt: &PromptSpec,
    candidates: &[String],
) -> Result<FillResponse, GatewayError> {
    if candidates.is_empty() {
        return Err(GatewayError::InvalidRequest("no candidates".into()));
    }
    if prompt.template.matches(BLANK).count() != 1 {
        return Err(GatewayError::InvalidRequest(format!(
            "prompt {} must contain exactly one {BLANK}",
            prompt.prompt_id
        )));
    }
    let mut resp = backend.fill(prompt, candidates)?;
    for c in candidates {
        match resp.probs.get_mut(c) {
            Some(p) => {
                if !(0.0..=1.0).contains(p) {
                    return Err(GatewayError::Protocol(format!("probability {p} for {c:?} outside [0, 1]")));
                }
                if *p == 0.0 {
                    *p = PROB_FLOOR;
                }
            }
            None if resp.unsupported.contains_key(c) => {}
            None => return Err(GatewayError::Protocol(format!("backend omitted candidate {c:?}"))),
        }
    }
    Ok(resp)
}

/// Embeds `texts`, one fixed-dimension vector each.
pub fn embed_sentences(backend: &dyn MaskedScorer, texts: &[String]) -> Result<EmbeddingBatch, GatewayError> {
    if texts.is_empty() {
        return Ok(EmbeddingBatch {
            vectors: Vec::new(),
            model_tag: backend.model_tag().to_string(),
            pooling: EMBEDDING_POOLING.to_string(),
        });
    }
    let batch = backend.embed(texts)?;
    if batch.vectors.len() != texts.len() {
        return Err(GatewayError::Protocol(format!(
            "asked for {} embeddings, got {}",
            texts.len(),
            batch.vectors.len()
        )));
    }
    let dim = batch.vectors[0].len();
    if batch.vectors.iter().any(|v| v.len() != dim) {
        return Err(GatewayError::Protocol("embedding dimensions differ".into()));
    }
    Ok(batch)
}

pub struct NgramBackend {
    model: NGramModel,
    model_tag: String,
}

impl NgramBackend {
    pub fn new(model: NGramModel, model_tag: impl Into<String>) -> Self {
        NgramBackend { model, model_tag: model_tag.into() }
    }

    pub fn model(&self) -> &NGramModel {
        &self.model
    }
}

impl MaskedScorer for NgramBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Ngram
    }

    fn model_tag(&self) -> &str {
        &self.model_tag
    }

    /// The probability surrogate is the unnormalized product of the
    /// blank-covering window probabilities.
    fn fill(&self, prompt: &PromptSpec, candidates: &[String]) -> Result<FillResponse, GatewayError> {
        let (left, right) = prompt.context_tokens().map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let mut probs = BTreeMap::new();
        let mut unsupported = BTreeMap::new();
        for c in candidates {
            match single_token(c) {
                Ok(tok) => {
                    if !self.model.contains(&tok) {
                        unsupported.insert(c.clone(), "not in vocabulary; scored via <unk>".into());
                    }
                    probs.insert(c.clone(), self.model.window_product(&left, &tok, &right));
                }
                Err(e) => {
                    unsupported.insert(c.clone(), e.to_string());
                }
            }
        }
        Ok(FillResponse { prompt_id: prompt.prompt_id.clone(), probs, model_tag: self.model_tag.clone(), unsupported })
    }
}

pub struct UnigramBackend {
    table: BackgroundUnigrams,
    model_tag: String,
}

impl UnigramBackend {
    pub fn new(table: BackgroundUnigrams, model_tag: impl Into<String>) -> Self {
        UnigramBackend { table, model_tag: model_tag.into() }
    }
}

impl MaskedScorer for UnigramBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Unigram
    }

    fn model_tag(&self) -> &str {
        &self.model_tag
    }

    fn fill(&self, prompt: &PromptSpec, candidates: &[String]) -> Result<FillResponse, GatewayError> {
        let mut probs = BTreeMap::new();
        let mut unsupported = BTreeMap::new();
        for c in candidates {
            match single_token(c) {
                Ok(tok) => {
                    if !self.table.contains(&tok) {
                        unsupported.insert(c.clone(), "not in background table; floor used".into());
                    }
                    probs.insert(c.clone(), self.table.prob(&tok));
                }
                Err(e) => {
                    unsupported.insert(c.clone(), e.to_string());
                }
            }
        }
        Ok(FillResponse { prompt_id: prompt.prompt_id.clone(), probs, model_tag: self.model_tag.clone(), unsupported })
    }
}

#[derive(Deserialize)]
struct FillWire {
    probs: BTreeMap<String, f64>,
    model_tag: String,
    #[serde(default)]
    errors: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct EmbedWire {
    vectors: Vec<Vec<f64>>,
    model_tag: String,
}

/// A sidecar reached through any [`Transport`]: live HTTP, a recording
/// proxy, or a replay cache.
pub struct RemoteBackend {
    kind: BackendKind,
    transport: Arc<dyn Transport>,
    model_tag: String,
}

impl RemoteBackend {
    pub fn new(kind: BackendKind, transport: Arc<dyn Transport>, model_tag: impl Into<String>) -> Self {
        RemoteBackend { kind, transport, model_tag: model_tag.into() }
    }

    fn check_tag(&self, actual: &str) -> Result<(), GatewayError> {
        if !self.model_tag.is_empty() && actual != self.model_tag {
            return Err(GatewayError::ProvenanceMismatch {
                expected: self.model_tag.clone(),
                actual: actual.to_string(),
            });
        }
        Ok(())
    }

    pub fn health(&self) -> Result<Value, GatewayError> {
        self.transport.get("/health")
    }
}

impl MaskedScorer for RemoteBackend {
    fn kind(&self) -> BackendKind {
        self.kind
    }

    fn model_tag(&self) -> &str {
        &self.model_tag
    }

    fn fill(&self, prompt: &PromptSpec, candidates: &[String]) -> Result<FillResponse, GatewayError> {
        let body = json!({ "text": prompt.template, "candidates": candidates });
        let raw = self.transport.post("/fill", &body)?;
        let wire: FillWire =
            serde_json::from_value(raw).map_err(|e| GatewayError::Protocol(format!("/fill response: {e}")))?;
        self.check_tag(&wire.model_tag)?;
        Ok(FillResponse {
            prompt_id: prompt.prompt_id.clone(),
            probs: wire.probs,
            model_tag: wire.model_tag,
            unsupported: wire.errors,
        })
    }

    fn embed(&self, texts: &[String]) -> Result<EmbeddingBatch, GatewayError> {
        let raw = self.transport.post("/embed", &json!({ "texts": texts }))?;
        let wire: EmbedWire =
            serde_json::from_value(raw).map_err(|e| GatewayError::Protocol(format!("/embed response: {e}")))?;
        self.check_tag(&wire.model_tag)?;
        Ok(EmbeddingBatch { vectors: wire.vectors, model_tag: wire.model_tag, pooling: EMBEDDING_POOLING.to_string() })
    }
}

#[derive(Debug, Clone)]
pub struct GatewayOptions {
    pub retry: RetryPolicy,
    pub max_inflight: usize,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        GatewayOptions { retry: RetryPolicy::default(), max_inflight: 8 }
    }
}

/// Resolves a backend reference into a live scorer.
pub fn open_backend(backend: &BackendRef, options: &GatewayOptions) -> Result<Arc<dyn MaskedScorer>, GatewayError> {
    let target = backend.endpoint_or_path.as_str();
    Ok(match backend.kind {
        BackendKind::Ngram => {
            let model = NGramModel::load(target)?;
            Arc::new(NgramBackend::new(model, backend.model_tag.clone()))
        }
        BackendKind::Unigram => {
            let table = BackgroundUnigrams::load(target)?;
            Arc::new(UnigramBackend::new(table, backend.model_tag.clone()))
        }
        BackendKind::NeuralRemote => {
            let t = HttpTransport::new(target, options.retry, options.max_inflight)?;
            Arc::new(RemoteBackend::new(backend.kind, Arc::new(t), backend.model_tag.clone()))
        }
        BackendKind::Replay => {
            let t = ReplayTransport::open(target)?;
            Arc::new(RemoteBackend::new(backend.kind, Arc::new(t), backend.model_tag.clone()))
        }
    })
}

/// Opens a live neural sidecar whose exchanges are appended to `cache_path`.
pub fn open_recording(
    backend: &BackendRef,
    cache_path: impl AsRef<Path>,
    options: &GatewayOptions,
) -> Result<Arc<dyn MaskedScorer>, GatewayError> {
    if backend.kind != BackendKind::NeuralRemote {
        return Err(GatewayError::Unsupported { kind: backend.kind, operation: "recording" });
    }
    let live = HttpTransport::new(&backend.endpoint_or_path, options.retry, options.max_inflight)?;
    let t = RecordingTransport::new(live, cache_path)?;
    Ok(Arc::new(RemoteBackend::new(BackendKind::NeuralRemote, Arc::new(t), backend.model_tag.clone())))
}

/// Checks that all model tags in `tags` agree, returning the common one.
pub fn common_tag<'a>(tags: impl IntoIterator<Item = &'a str>) -> Result<Option<&'a str>, GatewayError> {
    let set: BTreeSet<&str> = tags.into_iter().collect();
    match set.len() {
        0 => Ok(None),
        1 => Ok(set.into_iter().next()),
        _ => {
            let mut it = set.into_iter();
            Err(GatewayError::ProvenanceMismatch {
                expected: it.next().unwrap_or_default().to_string(),
                actual: it.collect::<Vec<_>>().join(","),
            })
        }
    }
}
