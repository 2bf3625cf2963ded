//! Seeded synthetic worlds with known ground truth: corpora with exact
//! token counts, survey waves from a planted linear model, drifting weekly
//! corpora, and an in-process embedding service.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use chrono::{Days, NaiveDate};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::RollingWindow;
use crate::backend::{
    embed_sentences, BackendKind, GatewayError, RecordingTransport, RemoteBackend, ReplayEntry, Transport,
};
use crate::corpus::{tokenize, CorpusManifest, MediaDietDataset, Medium, SentenceRecord, StoredDocument};
use crate::explain::{embed_dataset, ExplainOptions};
use crate::probe::{PromptSpec, ScoreTable, TargetSpec, Variant, BLANK};
use crate::survey::{AnalysisDataset, AnalysisRow, DemographicScheme, SurveyWave};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

fn default_window_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date")
}

fn default_window_end() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 3, 7).expect("valid date")
}

fn default_sentence_length() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub dataset_id: String,
    pub outlet: String,
    /// Size of the generated Zipf vocabulary when `token_distribution` is empty.
    pub vocab_size: usize,
    pub n_sentences: usize,
    #[serde(default = "default_sentence_length")]
    pub sentence_length: usize,
    #[serde(default)]
    pub token_distribution: BTreeMap<String, f64>,
    #[serde(default)]
    pub planted_coefficients: BTreeMap<String, f64>,
    #[serde(default)]
    pub noise_sd: f64,
    pub seed: u64,
    #[serde(default = "default_window_start")]
    pub window_start: NaiveDate,
    #[serde(default = "default_window_end")]
    pub window_end: NaiveDate,
}

impl SynthSpec {
    /// The token distribution, generating `tok0001..` with Zipf weights
    /// when none is given.
    pub fn distribution(&self) -> Result<Vec<(String, f64)>, SynthError> {
        if self.token_distribution.is_empty() {
            if self.vocab_size == 0 {
                return Err(SynthError::InvalidSpec("empty vocabulary".into()));
            }
            let h: f64 = (1..=self.vocab_size).map(|r| 1.0 / r as f64).sum();
            return Ok((1..=self.vocab_size).map(|r| (format!("tok{r:04}"), 1.0 / (r as f64 * h))).collect());
        }
        let total: f64 = self.token_distribution.values().sum();
        if self.token_distribution.values().any(|p| !(p.is_finite() && *p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(SynthError::InvalidSpec(format!("token distribution sums to {total}")));
        }
        if self.noise_sd < 0.0 {
            return Err(SynthError::InvalidSpec("negative noise_sd".into()));
        }
        Ok(self.token_distribution.iter().map(|(t, p)| (t.clone(), *p)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub dataset: MediaDietDataset,
    /// Exact token counts of the generated sentences.
    pub counts: BTreeMap<String, u64>,
}

pub const SENTENCES_PER_DOC: usize = 10;

fn documents_from_sentences(
    dataset_id: &str,
    outlet: &str,
    date: NaiveDate,
    sentences: Vec<Vec<String>>,
) -> Vec<StoredDocument> {
    sentences
        .chunks(SENTENCES_PER_DOC)
        .enumerate()
        .map(|(d, chunk)| {
            let doc_id = format!("{dataset_id}-{d:05}");
            StoredDocument {
                doc_id: doc_id.clone(),
                outlet: outlet.to_string(),
                medium: Medium::Web,
                published_at: date,
                title: String::new(),
                sentences: chunk
                    .iter()
                    .enumerate()
                    .map(|(i, toks)| SentenceRecord {
                        sent_id: format!("{doc_id}:{i:04}"),
                        doc_id: doc_id.clone(),
                        text: toks.join(" "),
                        tokens: toks.clone(),
                    })
                    .collect(),
            }
        })
        .collect()
}

fn manifest(dataset_id: &str, outlet: &str, start: NaiveDate, end: NaiveDate) -> CorpusManifest {
    CorpusManifest {
        dataset_id: dataset_id.to_string(),
        outlet: outlet.to_string(),
        medium: Medium::Web,
        topic: "synthetic".to_string(),
        window_start: start,
        window_end: end,
        doc_count: 0,
        sentence_count: 0,
    }
}

/// Sentences of i.i.d. tokens drawn from the [`SynthSpec`] token distribution.
pub fn gen_corpus(spec: &SynthSpec) -> Result<SynthCorpus, SynthError> {
    let dist = spec.distribution()?;
    let index = WeightedIndex::new(dist.iter().map(|(_, p)| *p)).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let sentences: Vec<Vec<String>> = (0..spec.n_sentences)
        .map(|_| {
            (0..spec.sentence_length)
                .map(|_| {
                    let tok = dist[index.sample(&mut rng)].0.clone();
                    *counts.entry(tok.clone()).or_default() += 1;
                    tok
                })
                .collect()
        })
        .collect();
    let docs = documents_from_sentences(&spec.dataset_id, &spec.outlet, spec.window_start, sentences);
    Ok(SynthCorpus {
        dataset: MediaDietDataset::new(
            manifest(&spec.dataset_id, &spec.outlet, spec.window_start, spec.window_end),
            docs,
        ),
        counts,
    })
}

fn default_attention_range() -> (f64, f64) {
    (0.2, 0.6)
}

fn default_dirichlet_alpha() -> f64 {
    5.0
}

/// Parameters of the planted survey model. Coefficient keys are
/// `intercept` or regression feature names (`score`, `base_prob`,
/// `attention`, `score:attention`, `demo:<band>`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyGenParams {
    pub coefficients: BTreeMap<String, f64>,
    pub noise_sd: f64,
    pub seed: u64,
    pub wave_id: String,
    pub field_date: NaiveDate,
    /// Attention share prior: uniform on this range.
    #[serde(default = "default_attention_range")]
    pub attention_range: (f64, f64),
    /// Demographic shares prior: symmetric Dirichlet within each band group.
    #[serde(default = "default_dirichlet_alpha")]
    pub dirichlet_alpha: f64,
    #[serde(default)]
    pub scheme: DemographicScheme,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticSurvey {
    pub waves: Vec<SurveyWave>,
    pub params: SurveyGenParams,
}

fn dirichlet<R: Rng>(rng: &mut R, k: usize, alpha: f64) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).expect("positive shape");
    let draws: Vec<f64> = (0..k).map(|_| g.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

/// Survey waves whose proportions follow the planted linear model, clipped
/// to [0, 1]. One wave per (diet, question) present among the valid score
/// rows; attention is drawn per wave and demographics per diet.
pub fn gen_survey(scores: &ScoreTable, params: &SurveyGenParams) -> SyntheticSurvey {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let noise = Normal::new(0.0, params.noise_sd.max(0.0)).expect("finite sd");
    let mut cells: BTreeMap<(&str, &str), BTreeMap<&str, (f64, f64)>> = BTreeMap::new();
    for row in scores.rows.iter().filter(|r| r.is_ok()) {
        if let (Some(score), Some(base)) = (row.score, row.base_prob) {
            cells
                .entry((&row.diet_id, &row.question_id))
                .or_default()
                .entry(&row.answer_label)
                .or_insert((score, base));
        }
    }
    let bands: Vec<&Vec<String>> = params.scheme.bands.values().collect();
    let mut demographics: BTreeMap<&str, BTreeMap<String, f64>> = BTreeMap::new();
    for (diet, _) in cells.keys() {
        demographics.entry(diet).or_insert_with(|| {
            bands
                .iter()
                .flat_map(|names| names.iter().cloned().zip(dirichlet(&mut rng, names.len(), params.dirichlet_alpha)))
                .collect()
        });
    }
    let coef = |k: &str| params.coefficients.get(k).copied().unwrap_or(0.0);
    let (lo, hi) = params.attention_range;
    let waves = cells
        .into_iter()
        .map(|((diet, question), answers)| {
            let attention = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let demo = &demographics[diet];
            let proportions = answers
                .into_iter()
                .map(|(label, (score, base))| {
                    let mut y = coef("intercept")
                        + coef("score") * score
                        + coef("base_prob") * base
                        + coef("attention") * attention
                        + coef("score:attention") * score * attention;
                    for (band, share) in demo {
                        y += coef(&format!("demo:{band}")) * share;
                    }
                    y += noise.sample(&mut rng);
                    (label.to_string(), y.clamp(0.0, 1.0))
                })
                .collect();
            SurveyWave {
                wave_id: params.wave_id.clone(),
                field_date: params.field_date,
                diet_id: diet.to_string(),
                question_id: question.to_string(),
                proportions,
                attention_very_close: attention,
                demographics: demo.clone(),
            }
        })
        .collect();
    SyntheticSurvey { waves, params: params.clone() }
}

fn synthetic_row(i: usize, base_prob: f64, score: f64, proportion: f64) -> AnalysisRow {
    AnalysisRow {
        diet_id: format!("diet{:03}", i % 4),
        question_id: format!("q{i:05}"),
        prompt_id: format!("p{i:05}"),
        variant: Variant::Orig,
        target_word: "target".into(),
        answer_label: "answer".into(),
        score,
        base_prob,
        proportion,
        attention: 0.0,
        demographics: BTreeMap::new(),
        date: default_window_end(),
        category: None,
        topic: None,
        medium: None,
        model_tag_diet: "synthetic".into(),
    }
}

/// Rows with `proportion = intercept + slope * score + N(0, noise_sd)` and
/// scores uniform on [0.2, 2.2].
pub fn planted_linear_dataset(n: usize, intercept: f64, slope: f64, noise_sd: f64, seed: u64) -> AnalysisDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).expect("finite sd");
    AnalysisDataset {
        rows: (0..n)
            .map(|i| {
                let score = rng.random_range(0.2..2.2);
                let base_prob = rng.random_range(0.001..0.2);
                let y = intercept + slope * score + noise.sample(&mut rng);
                synthetic_row(i, base_prob, score, y)
            })
            .collect(),
    }
}

/// Rows with `proportion = sin(4 * base_prob) + 0.5 * score^2 + N(0, noise_sd)`,
/// base_prob uniform on [0, 1] and score uniform on [0, 2].
pub fn planted_nonlinear_dataset(n: usize, noise_sd: f64, seed: u64) -> AnalysisDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).expect("finite sd");
    AnalysisDataset {
        rows: (0..n)
            .map(|i| {
                let b: f64 = rng.random_range(0.0..1.0);
                let s: f64 = rng.random_range(0.0..2.0);
                let y = (4.0 * b).sin() + 0.5 * s * s + noise.sample(&mut rng);
                synthetic_row(i, b, s, y)
            })
            .collect(),
    }
}

/// `n` draws from a standard bivariate normal with correlation `rho`.
pub fn bivariate_normal(n: usize, rho: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).expect("unit normal");
    let k = (1.0 - rho * rho).sqrt();
    (0..n)
        .map(|_| {
            let a: f64 = z.sample(&mut rng);
            let b: f64 = z.sample(&mut rng);
            (a, rho * a + k * b)
        })
        .unzip()
}

/// Weekly corpora in which the word "minor" fills a fixed set of threat
/// frames with a geometrically decaying share, the rest going to "major".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub weeks: usize,
    pub start: NaiveDate,
    /// Frame sentences per frame per week.
    pub frame_sentences: usize,
    pub filler_sentences: usize,
    pub initial_share: f64,
    pub weekly_decay: f64,
    pub seed: u64,
}

impl Default for DriftSpec {
    fn default() -> Self {
        DriftSpec {
            weeks: 26,
            start: NaiveDate::from_ymd_opt(2020, 3, 2).expect("valid date"),
            frame_sentences: 60,
            filler_sentences: 120,
            initial_share: 0.6,
            weekly_decay: 0.93,
            seed: 0,
        }
    }
}

pub const DRIFT_FRAMES: [&str; 3] = [
    "the virus is a {} threat to the country .",
    "officials call the outbreak a {} threat .",
    "experts see a {} threat in the new cases .",
];

const FILLER: [&str; 6] = [
    "the market closed higher on monday .",
    "schools announced new schedules for the fall .",
    "the city council met to discuss the budget .",
    "local stores reported long lines this week .",
    "the weather service expects rain on friday .",
    "the team won its third game in a row .",
];

impl DriftSpec {
    /// Number of "minor" sentences per frame in `week`, non-increasing in
    /// the week index.
    pub fn minor_count(&self, week: usize) -> usize {
        let share = self.initial_share * self.weekly_decay.powi(week as i32);
        (self.frame_sentences as f64 * share).round() as usize
    }
}

/// One dataset per week over consecutive, non-overlapping 7-day windows.
pub fn drifting_corpora(spec: &DriftSpec) -> Vec<(RollingWindow, MediaDietDataset)> {
    (0..spec.weeks)
        .map(|w| {
            let start = spec.start + Days::new(7 * w as u64);
            let end = start + Days::new(6);
            let id = format!("drift-w{:02}", w + 1);
            let minor = spec.minor_count(w);
            let mut sentences: Vec<Vec<String>> = Vec::new();
            for frame in DRIFT_FRAMES {
                for i in 0..spec.frame_sentences {
                    let word = if i < minor { "minor" } else { "major" };
                    sentences.push(tokenize(&frame.replace("{}", word)));
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (w as u64 + 1));
            for _ in 0..spec.filler_sentences {
                sentences.push(tokenize(FILLER[rng.random_range(0..FILLER.len())]));
            }
            sentences.shuffle(&mut rng);
            let docs = documents_from_sentences(&id, "SYN", start, sentences);
            (
                RollingWindow { window_id: id.clone(), start, end },
                MediaDietDataset::new(manifest(&id, "SYN", start, end), docs),
            )
        })
        .collect()
}

/// Cloze prompts over the drift frames, targets "minor" and "major".
pub fn drift_prompts() -> Vec<PromptSpec> {
    DRIFT_FRAMES
        .iter()
        .enumerate()
        .map(|(i, frame)| PromptSpec {
            prompt_id: format!("threat{}", i + 1),
            template: frame.replace("{}", BLANK),
            targets: vec![
                TargetSpec::new("major", &[], "a major threat"),
                TargetSpec::new("minor", &[], "a minor threat"),
            ],
            question_id: "threat".into(),
            variant: Variant::Orig,
            source_prompt_id: None,
        })
        .collect()
}

pub const HASH_EMBED_DIM: usize = 16;
pub const HASH_EMBED_TAG: &str = "hash-embed-v1";

/// In-process stand-in for an embedding sidecar: each token maps to a
/// fixed pseudo-random vector derived from its SHA-256, and a sentence is
/// the mean of its token vectors. Answers `/embed` and `/health`.
#[derive(Debug, Clone)]
pub struct HashEmbedTransport {
    pub model_tag: String,
}

impl Default for HashEmbedTransport {
    fn default() -> Self {
        HashEmbedTransport { model_tag: HASH_EMBED_TAG.to_string() }
    }
}

pub fn hash_embed(text: &str) -> Vec<f64> {
    let tokens = tokenize(text);
    let mut out = vec![0.0; HASH_EMBED_DIM];
    for tok in &tokens {
        let digest = Sha256::digest(tok.as_bytes());
        for (i, pair) in digest.chunks(2).enumerate() {
            let v = i16::from_le_bytes([pair[0], pair[1]]) as f64 / 32768.0;
            out[i] += v;
        }
    }
    if !tokens.is_empty() {
        for v in &mut out {
            *v /= tokens.len() as f64;
        }
    }
    out
}

impl Transport for HashEmbedTransport {
    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        if path != "/embed" {
            return Err(GatewayError::Protocol(format!("{path} not served by the hashing embedder")));
        }
        let texts =
            body["texts"].as_array().ok_or_else(|| GatewayError::InvalidRequest("texts must be an array".into()))?;
        let vectors: Vec<Vec<f64>> = texts.iter().map(|t| hash_embed(t.as_str().unwrap_or_default())).collect();
        Ok(json!({ "vectors": vectors, "model_tag": self.model_tag }))
    }

    fn get(&self, path: &str) -> Result<Value, GatewayError> {
        match path {
            "/health" => Ok(json!({ "status": "ok", "model_tag": self.model_tag })),
            _ => Err(GatewayError::Protocol(format!("GET {path} not served"))),
        }
    }

    fn describe(&self) -> String {
        "hashing embedder".into()
    }
}

/// Writes a replay cache answering every `/embed` request that
/// [`crate::explain::nearest_training_sentences`] issues for `dataset` (at
/// `batch_size`) and for each of `queries`, as served by the hashing
/// embedder. Entries are sorted by key so the file is reproducible.
pub fn record_hash_embed_replay(
    dataset: &MediaDietDataset,
    queries: &[String],
    batch_size: usize,
    out: &Path,
) -> Result<usize, GatewayError> {
    let scratch = out.with_extension("recording");
    let _ = std::fs::remove_file(&scratch);
    {
        let t = RecordingTransport::new(HashEmbedTransport::default(), &scratch)?;
        let backend = RemoteBackend::new(BackendKind::NeuralRemote, Arc::new(t), HASH_EMBED_TAG);
        let options = ExplainOptions { batch_size, cache_dir: None };
        embed_dataset(dataset, &backend, &options).map_err(|e| GatewayError::Protocol(e.to_string()))?;
        for q in queries {
            embed_sentences(&backend, std::slice::from_ref(q))?;
        }
    }
    let text = std::fs::read_to_string(&scratch).map_err(|e| GatewayError::io(&scratch, e))?;
    let _ = std::fs::remove_file(&scratch);
    let mut entries: BTreeMap<String, &str> = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let entry: ReplayEntry = serde_json::from_str(line).map_err(|e| GatewayError::Protocol(e.to_string()))?;
        entries.insert(entry.key, line);
    }
    let mut body = String::new();
    for line in entries.values() {
        body.push_str(line);
        body.push('\n');
    }
    std::fs::write(out, body).map_err(|e| GatewayError::io(out, e))?;
    Ok(entries.len())
}
