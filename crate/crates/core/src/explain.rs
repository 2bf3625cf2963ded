//! Nearest training sentences to a filled-in prompt in embedding space.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{embed_sentences, GatewayError, MaskedScorer};
use crate::corpus::MediaDietDataset;

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_BATCH_SIZE: usize = 64;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("embedding backend unavailable")]
    Backend(#[from] GatewayError),
    #[error("query embedding has dimension {query}, dataset embeddings have {dataset}")]
    DimensionMismatch { query: usize, dataset: usize },
    #[error("embedding cache {path}: {message}")]
    Cache { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub sent_id: String,
    pub doc_id: String,
    pub text: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborResult {
    pub query_text: String,
    pub dataset_id: String,
    pub model_tag: String,
    pub pooling: String,
    pub k: usize,
    pub neighbors: Vec<Neighbor>,
}

impl NeighborResult {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["rank", "sent_id", "doc_id", "similarity", "text"])?;
        for (i, n) in self.neighbors.iter().enumerate() {
            wtr.write_record([&(i + 1).to_string(), &n.sent_id, &n.doc_id, &n.similarity.to_string(), &n.text])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Embeddings of every sentence of one dataset under one model, in
/// dataset iteration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceEmbeddings {
    pub dataset_id: String,
    pub model_tag: String,
    pub pooling: String,
    pub sent_ids: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ExplainOptions {
    pub batch_size: usize,
    /// Directory holding one cache file per (dataset, model tag).
    pub cache_dir: Option<PathBuf>,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        ExplainOptions { batch_size: DEFAULT_BATCH_SIZE, cache_dir: None }
    }
}

fn cache_path(dir: &Path, dataset_id: &str, model_tag: &str) -> PathBuf {
    let clean = |s: &str| -> String {
        s.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
    };
    dir.join(format!("{}__{}.embeddings.json", clean(dataset_id), clean(model_tag)))
}

fn read_cache(path: &Path, dataset: &MediaDietDataset, model_tag: &str) -> Option<SentenceEmbeddings> {
    let text = fs::read_to_string(path).ok()?;
    let cached: SentenceEmbeddings = serde_json::from_str(&text).ok()?;
    let fresh = cached.dataset_id == dataset.id()
        && cached.model_tag == model_tag
        && cached.sent_ids.iter().map(String::as_str).eq(dataset.sentences().map(|s| s.sent_id.as_str()));
    fresh.then_some(cached)
}

/// Embeds all sentences of `dataset`, reusing the on-disk cache when it
/// matches the dataset's sentence ids and the backend's model tag.
pub fn embed_dataset(
    dataset: &MediaDietDataset,
    backend: &dyn MaskedScorer,
    options: &ExplainOptions,
) -> Result<SentenceEmbeddings, ExplainError> {
    let path = options.cache_dir.as_ref().map(|d| cache_path(d, dataset.id(), backend.model_tag()));
    if let Some(hit) = path.as_ref().and_then(|p| read_cache(p, dataset, backend.model_tag())) {
        log::debug!("embedding cache hit for {}", dataset.id());
        return Ok(hit);
    }
    let texts: Vec<String> = dataset.sentences().map(|s| s.text.clone()).collect();
    let batches: Vec<_> = texts
        .par_chunks(options.batch_size.max(1))
        .map(|chunk| embed_sentences(backend, chunk))
        .collect::<Result<_, _>>()?;
    let pooling =
        batches.first().map(|b| b.pooling.clone()).unwrap_or_else(|| crate::backend::EMBEDDING_POOLING.to_string());
    let vectors: Vec<Vec<f64>> = batches.into_iter().flat_map(|b| b.vectors).collect();
    if let Some(dim) = vectors.first().map(Vec::len) {
        if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
            return Err(ExplainError::DimensionMismatch { query: bad.len(), dataset: dim });
        }
    }
    let out = SentenceEmbeddings {
        dataset_id: dataset.id().to_string(),
        model_tag: backend.model_tag().to_string(),
        pooling,
        sent_ids: dataset.sentences().map(|s| s.sent_id.clone()).collect(),
        vectors,
    };
    if let Some(p) = path {
        let err = |message: String| ExplainError::Cache { path: p.display().to_string(), message };
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| err(e.to_string()))?;
        }
        let json = serde_json::to_string(&out).map_err(|e| err(e.to_string()))?;
        fs::write(&p, json).map_err(|e| err(e.to_string()))?;
    }
    Ok(out)
}

/// Cosine similarity clamped to [-1, 1]; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Exhaustive top-k: indices into `embeddings` with their similarity,
/// ordered by similarity descending, then sent_id ascending.
pub fn top_k(query: &[f64], embeddings: &SentenceEmbeddings, k: usize) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> =
        embeddings.vectors.par_iter().enumerate().map(|(i, v)| (i, cosine(query, v))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| embeddings.sent_ids[a.0].cmp(&embeddings.sent_ids[b.0])));
    scored.truncate(k);
    scored
}

pub fn nearest_training_sentences(
    filled_prompt: &str,
    dataset: &MediaDietDataset,
    backend: &dyn MaskedScorer,
    k: usize,
    options: &ExplainOptions,
) -> Result<NeighborResult, ExplainError> {
    if k == 0 {
        return Err(ExplainError::ZeroK);
    }
    let embeddings = embed_dataset(dataset, backend, options)?;
    let query = embed_sentences(backend, &[filled_prompt.to_string()])?;
    let qv = &query.vectors[0];
    if let Some(v) = embeddings.vectors.first() {
        if v.len() != qv.len() {
            return Err(ExplainError::DimensionMismatch { query: qv.len(), dataset: v.len() });
        }
    }
    let sentences: Vec<_> = dataset.sentences().collect();
    let neighbors = top_k(qv, &embeddings, k)
        .into_iter()
        .map(|(i, similarity)| Neighbor {
            sent_id: sentences[i].sent_id.clone(),
            doc_id: sentences[i].doc_id.clone(),
            text: sentences[i].text.clone(),
            similarity,
        })
        .collect();
    Ok(NeighborResult {
        query_text: filled_prompt.to_string(),
        dataset_id: dataset.id().to_string(),
        model_tag: backend.model_tag().to_string(),
        pooling: embeddings.pooling,
        k,
        neighbors,
    })
}
