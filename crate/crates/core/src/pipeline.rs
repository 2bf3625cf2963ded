//! Declarative end-to-end runs: ingest, train, score, join, analyze,
//! explain and rolling prediction, driven by one JSON config.
//!
//! Every CSV artifact starts with a `# config_sha256: <hex>` line and every
//! JSON artifact carries a `config_sha256` field.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{
    fit_gam, fit_ols, grouped_correlations, pearson_bootstrap, rolling_predict, write_correlations_csv,
    write_rolling_csv, write_table1, GamOptions, GroupBy, GroupedCorrelation, OlsModel, OlsOptions, RegressionFit,
    RollingWindow, DEFAULT_BOOTSTRAP,
};
use crate::backend::{open_backend, BackendKind, BackendRef, GatewayOptions, MaskedScorer};
use crate::corpus::{ingest_files, read_keywords, CorpusManifest, IngestOptions, MediaDietDataset};
use crate::explain::{nearest_training_sentences, ExplainOptions, DEFAULT_K};
use crate::ngram::{BackgroundUnigrams, NGramModel, DEFAULT_DISCOUNT, DEFAULT_ORDER};
use crate::probe::{load_prompts, score_matrix, PromptSpec, ScoreTable, SynonymLexicon};
use crate::survey::{
    join_scores_responses, load_questions, load_survey_csv, write_survey_csv, AnalysisDataset, AnalysisRow, DietInfo,
    JoinOptions, SurveyColumns, SurveyWave,
};
use crate::synth::{gen_survey, SurveyGenParams};

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {field}: {message}")]
    Config { field: String, message: String },
    #[error("stage {stage} needs {artifact}, produced by stage {producer}; include {producer} in the stage list or run it first")]
    Dependency { stage: Stage, artifact: String, producer: Stage },
    #[error("stage {stage} failed")]
    Stage {
        stage: Stage,
        #[source]
        source: BoxError,
    },
}

impl PipelineError {
    /// Process exit code: 2 for configuration and dependency problems,
    /// 3 for a failed stage.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config { .. } | PipelineError::Dependency { .. } => 2,
            PipelineError::Stage { .. } => 3,
        }
    }
}

fn config_err(field: &str, message: impl Into<String>) -> PipelineError {
    PipelineError::Config { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Train,
    Score,
    Join,
    Analyze,
    Explain,
    Rolling,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::Ingest, Stage::Train, Stage::Score, Stage::Join, Stage::Analyze, Stage::Explain, Stage::Rolling];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Train => "train",
            Stage::Score => "score",
            Stage::Join => "join",
            Stage::Analyze => "analyze",
            Stage::Explain => "explain",
            Stage::Rolling => "rolling",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s.trim()).ok_or_else(|| {
            format!("unknown stage {s:?}; expected one of ingest, train, score, join, analyze, explain, rolling")
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Manifest header: dataset id, outlet, medium, topic and window.
    pub manifest: PathBuf,
    pub inputs: Vec<PathBuf>,
    #[serde(default)]
    pub keywords: Option<PathBuf>,
}

/// A backend either trained by the pipeline from an ingested dataset
/// (`dataset`) or found at `endpoint_or_path`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model_tag: String,
    #[serde(default)]
    pub dataset: Option<String>,
    #[serde(default)]
    pub endpoint_or_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DietConfig {
    pub diet_id: String,
    pub backend: BackendConfig,
    /// Dataset describing the diet's window and medium, and searched by
    /// `explain`. Defaults to the backend's training dataset.
    #[serde(default)]
    pub dataset: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SurveySource {
    Files {
        files: Vec<PathBuf>,
        #[serde(default)]
        columns: SurveyColumns,
    },
    Synthetic(SurveyGenParams),
}

fn default_bootstrap() -> usize {
    DEFAULT_BOOTSTRAP
}

fn default_models() -> Vec<OlsModel> {
    vec![OlsModel::Model1, OlsModel::Model2]
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default = "default_models")]
    pub models: Vec<OlsModel>,
    #[serde(default)]
    pub group_by: Vec<GroupBy>,
    #[serde(default = "default_true")]
    pub gam: bool,
    #[serde(default)]
    pub allow_misaligned: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            bootstrap: DEFAULT_BOOTSTRAP,
            models: default_models(),
            group_by: Vec::new(),
            gam: true,
            allow_misaligned: false,
        }
    }
}

fn default_order() -> usize {
    DEFAULT_ORDER
}

fn default_discount() -> f64 {
    DEFAULT_DISCOUNT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NgramConfig {
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_discount")]
    pub discount: f64,
}

impl Default for NgramConfig {
    fn default() -> Self {
        NgramConfig { order: DEFAULT_ORDER, discount: DEFAULT_DISCOUNT }
    }
}

fn default_k() -> usize {
    DEFAULT_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainConfig {
    pub prompt_id: String,
    pub fill: String,
    pub dataset: String,
    pub backend: BackendConfig,
    #[serde(default = "default_k")]
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RollingWindowConfig {
    pub window_id: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// `None` records a gap for this window.
    #[serde(default)]
    pub backend: Option<BackendConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RollingConfig {
    pub windows: Vec<RollingWindowConfig>,
    /// Restricts observed overlay points to one diet.
    #[serde(default)]
    pub diet_id: Option<String>,
    /// Prompts to track; defaults to the run's prompt file.
    #[serde(default)]
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub datasets: Vec<DatasetConfig>,
    pub base: BackendConfig,
    pub diets: Vec<DietConfig>,
    pub prompts: PathBuf,
    #[serde(default)]
    pub synonyms: Option<PathBuf>,
    pub questions: PathBuf,
    pub survey: SurveySource,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub ngram: NgramConfig,
    #[serde(default)]
    pub explain: Option<ExplainConfig>,
    #[serde(default)]
    pub rolling: Option<RollingConfig>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    /// Parses a config file. Relative paths are resolved against the
    /// config's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| config_err("config", format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| config_err("config", format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(cfg)
    }

    /// `p` resolved against the config file's directory.
    pub fn resolve(&self, p: impl AsRef<Path>) -> PathBuf {
        let p = p.as_ref();
        if p.is_relative() {
            self.base_dir.join(p)
        } else {
            p.to_path_buf()
        }
    }

    fn backends(&self) -> Vec<(String, &BackendConfig)> {
        let mut out = vec![("base".to_string(), &self.base)];
        out.extend(self.diets.iter().map(|d| (format!("diets[{}].backend", d.diet_id), &d.backend)));
        if let Some(e) = &self.explain {
            out.push(("explain.backend".into(), &e.backend));
        }
        if let Some(r) = &self.rolling {
            out.extend(
                r.windows.iter().filter_map(|w| {
                    w.backend.as_ref().map(|b| (format!("rolling.windows[{}].backend", w.window_id), b))
                }),
            );
        }
        out
    }

    /// Checks referenced files and backend declarations.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let exists = |field: &str, p: &Path| {
            let p = self.resolve(p);
            if p.exists() {
                Ok(())
            } else {
                Err(config_err(field, format!("{} does not exist", p.display())))
            }
        };
        exists("prompts", &self.prompts)?;
        exists("questions", &self.questions)?;
        if let Some(s) = &self.synonyms {
            exists("synonyms", s)?;
        }
        let mut ids = BTreeSet::new();
        for (i, d) in self.datasets.iter().enumerate() {
            exists(&format!("datasets[{i}].manifest"), &d.manifest)?;
            for p in &d.inputs {
                exists(&format!("datasets[{i}].inputs"), p)?;
            }
            if let Some(k) = &d.keywords {
                exists(&format!("datasets[{i}].keywords"), k)?;
            }
            let m = CorpusManifest::read(self.resolve(&d.manifest))
                .map_err(|e| config_err(&format!("datasets[{i}].manifest"), e.to_string()))?;
            if !ids.insert(m.dataset_id.clone()) {
                return Err(config_err(&format!("datasets[{i}]"), format!("duplicate dataset id {}", m.dataset_id)));
            }
        }
        if let SurveySource::Files { files, .. } = &self.survey {
            if files.is_empty() {
                return Err(config_err("survey.files", "no survey files listed"));
            }
            for p in files {
                exists("survey.files", p)?;
            }
        }
        if self.diets.is_empty() {
            return Err(config_err("diets", "at least one diet is required"));
        }
        let mut diet_ids = BTreeSet::new();
        for d in &self.diets {
            if !diet_ids.insert(&d.diet_id) {
                return Err(config_err("diets", format!("duplicate diet id {}", d.diet_id)));
            }
        }
        for (field, b) in self.backends() {
            if b.model_tag.trim().is_empty() {
                return Err(config_err(&format!("{field}.model_tag"), "model_tag must be non-empty"));
            }
            match (&b.dataset, &b.endpoint_or_path) {
                (Some(ds), None) => {
                    if !matches!(b.kind, BackendKind::Ngram | BackendKind::Unigram) {
                        return Err(config_err(
                            &format!("{field}.dataset"),
                            format!("{:?} backends cannot be trained from a dataset", b.kind),
                        ));
                    }
                    if !ids.contains(ds) && !self.datasets.is_empty() {
                        return Err(config_err(&format!("{field}.dataset"), format!("unknown dataset {ds}")));
                    }
                }
                (None, Some(_)) => {}
                _ => {
                    return Err(config_err(field.as_str(), "exactly one of dataset and endpoint_or_path is required"));
                }
            }
        }
        if self.analysis.bootstrap == 0 {
            return Err(config_err("analysis.bootstrap", "must be positive"));
        }
        if let Some(r) = &self.rolling {
            if let Some(p) = &r.prompts {
                exists("rolling.prompts", p)?;
            }
        }
        Ok(())
    }

    /// SHA-256 of the config's canonical JSON, leaving out the output
    /// directory so relocated runs share a hash.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("output_dir");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}

/// Locations of pipeline artifacts under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn datasets(&self) -> PathBuf {
        self.root.join("datasets")
    }
    pub fn ngram_model(&self, dataset_id: &str) -> PathBuf {
        self.root.join("models").join(format!("{dataset_id}.ngram.json"))
    }
    pub fn unigram_table(&self, dataset_id: &str) -> PathBuf {
        self.root.join("models").join(format!("{dataset_id}.unigram.tsv"))
    }
    pub fn scores(&self) -> PathBuf {
        self.root.join("scores.csv")
    }
    pub fn survey(&self) -> PathBuf {
        self.root.join("survey.csv")
    }
    pub fn analysis_rows(&self) -> PathBuf {
        self.root.join("analysis_dataset.jsonl")
    }
    pub fn analysis_dir(&self) -> PathBuf {
        self.root.join("analysis")
    }
    pub fn fit(&self, model: OlsModel) -> PathBuf {
        self.analysis_dir().join(format!("fit_{}.json", model.name()))
    }
    pub fn failed_marker(&self) -> PathBuf {
        self.root.join("FAILED")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("run_manifest.json")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: String,
    pub artifacts: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunReport {
    pub config_sha256: String,
    pub stages: Vec<StageReport>,
    pub failed: Option<String>,
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    layout: Layout,
    hash: String,
    gateway: GatewayOptions,
    report: StageReport,
}

/// An error and its sources joined with ": ".
fn error_chain(e: &(dyn std::error::Error + 'static)) -> String {
    let mut out = e.to_string();
    let mut next = e.source();
    while let Some(cause) = next {
        out.push_str(": ");
        out.push_str(&cause.to_string());
        next = cause.source();
    }
    out
}

fn stage_err(stage: Stage) -> impl Fn(BoxError) -> PipelineError {
    move |source| PipelineError::Stage { stage, source }
}

impl Run<'_> {
    fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.layout.root).unwrap_or(p).display().to_string()
    }

    fn create(&mut self, path: &Path) -> Result<fs::File, BoxError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        self.report.artifacts.push(self.rel(path));
        Ok(fs::File::create(path)?)
    }

    fn write_csv_with<F>(&mut self, path: &Path, body: F) -> Result<(), BoxError>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<(), BoxError>,
    {
        let mut buf = format!("# config_sha256: {}\n", self.hash).into_bytes();
        body(&mut buf)?;
        self.create(path)?.write_all(&buf)?;
        Ok(())
    }

    fn write_json(&mut self, path: &Path, value: &impl Serialize) -> Result<(), BoxError> {
        let doc = json!({ "config_sha256": self.hash, "result": value });
        let mut f = self.create(path)?;
        serde_json::to_writer_pretty(&mut f, &doc)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    fn backend_ref(&self, b: &BackendConfig) -> BackendRef {
        let endpoint_or_path = match (&b.dataset, b.kind) {
            (Some(ds), BackendKind::Ngram) => self.layout.ngram_model(ds).display().to_string(),
            (Some(ds), _) => self.layout.unigram_table(ds).display().to_string(),
            (None, BackendKind::NeuralRemote) => b.endpoint_or_path.clone().unwrap_or_default(),
            (None, _) => self.cfg.resolve(b.endpoint_or_path.clone().unwrap_or_default()).display().to_string(),
        };
        BackendRef { kind: b.kind, endpoint_or_path, model_tag: b.model_tag.clone() }
    }

    fn open(&self, b: &BackendConfig) -> Result<Arc<dyn MaskedScorer>, BoxError> {
        Ok(open_backend(&self.backend_ref(b), &self.gateway)?)
    }

    fn load_dataset(&self, id: &str) -> Result<MediaDietDataset, BoxError> {
        Ok(MediaDietDataset::load(self.layout.datasets(), id)?)
    }

    fn prompts(&mut self, path: &Path) -> Result<Vec<PromptSpec>, BoxError> {
        let mut prompts = load_prompts(self.cfg.resolve(path))?;
        if let Some(s) = &self.cfg.synonyms {
            let lexicon = SynonymLexicon::load(self.cfg.resolve(s))?;
            let warnings = lexicon.apply(&mut prompts);
            self.report.warnings.extend(warnings);
        }
        for p in &prompts {
            p.validate()?;
        }
        Ok(prompts)
    }

    fn ingest(&mut self) -> Result<(), BoxError> {
        let mut skipped = BTreeMap::new();
        for d in &self.cfg.datasets {
            let header = CorpusManifest::read(self.cfg.resolve(&d.manifest))?;
            let options = IngestOptions {
                keyword_filter: d.keywords.as_ref().map(|k| read_keywords(self.cfg.resolve(k))).transpose()?,
            };
            let inputs: Vec<PathBuf> = d.inputs.iter().map(|p| self.cfg.resolve(p)).collect();
            let outcome = ingest_files(&inputs, &header, &options)?;
            outcome.dataset.save(self.layout.datasets())?;
            let id = outcome.dataset.id().to_string();
            for p in [
                MediaDietDataset::data_path(&self.layout.datasets(), &id),
                MediaDietDataset::manifest_path(&self.layout.datasets(), &id),
            ] {
                let r = self.rel(&p);
                self.report.artifacts.push(r);
            }
            self.report.warnings.extend(outcome.warnings.iter().map(|w| format!("{id}: {w}")));
            skipped.insert(id, outcome.skipped);
        }
        let path = self.layout.datasets().join("ingest_report.json");
        self.write_json(&path, &skipped)
    }

    fn trained_backends(&self) -> BTreeSet<(String, bool)> {
        self.cfg
            .backends()
            .into_iter()
            .filter_map(|(_, b)| b.dataset.clone().map(|d| (d, b.kind == BackendKind::Ngram)))
            .collect()
    }

    fn train(&mut self) -> Result<(), BoxError> {
        for (ds, is_ngram) in self.trained_backends() {
            let dataset = self.load_dataset(&ds)?;
            if is_ngram {
                let model = NGramModel::train(&dataset, self.cfg.ngram.order, self.cfg.ngram.discount)?;
                let path = self.layout.ngram_model(&ds);
                self.create(&path)?;
                model.save(&path)?;
            } else {
                let table = BackgroundUnigrams::from_dataset(&dataset);
                let path = self.layout.unigram_table(&ds);
                let mut f = self.create(&path)?;
                table.write_tsv(&mut f)?;
            }
        }
        Ok(())
    }

    fn score(&mut self) -> Result<(), BoxError> {
        let prompts = self.prompts(&self.cfg.prompts.clone())?;
        let base = self.open(&self.cfg.base)?;
        let mut diets = Vec::new();
        for d in &self.cfg.diets {
            diets.push((d.diet_id.clone(), self.open(&d.backend)?));
        }
        let table = score_matrix(&diets, base.as_ref(), &prompts);
        let failed = table.rows.iter().filter(|r| !r.is_ok()).count();
        if failed > 0 {
            self.report.warnings.push(format!("{failed} score cell(s) failed; see the error column"));
        }
        let path = self.layout.scores();
        self.write_csv_with(&path, |buf| Ok(table.write_csv(buf)?))
    }

    fn diet_info(&self) -> Result<BTreeMap<String, DietInfo>, BoxError> {
        let mut out = BTreeMap::new();
        for d in &self.cfg.diets {
            if let Some(ds) = d.dataset.as_ref().or(d.backend.dataset.as_ref()) {
                let m = CorpusManifest::read(MediaDietDataset::manifest_path(&self.layout.datasets(), ds))?;
                out.insert(
                    d.diet_id.clone(),
                    DietInfo {
                        window_start: m.window_start,
                        window_end: m.window_end,
                        medium: Some(m.medium.to_string()),
                    },
                );
            }
        }
        Ok(out)
    }

    fn survey_waves(&mut self, scores: &ScoreTable) -> Result<Vec<SurveyWave>, BoxError> {
        match &self.cfg.survey {
            SurveySource::Files { files, columns } => {
                let mut waves = Vec::new();
                for f in files {
                    waves.extend(load_survey_csv(self.cfg.resolve(f), columns)?);
                }
                Ok(waves)
            }
            SurveySource::Synthetic(params) => {
                let synth = gen_survey(scores, params);
                for w in &synth.waves {
                    w.validate()?;
                }
                let path = self.layout.root.join("survey_params.json");
                self.write_json(&path, &synth.params)?;
                let path = self.layout.survey();
                let waves = synth.waves;
                self.write_csv_with(&path, |buf| Ok(write_survey_csv(buf, &waves)?))?;
                Ok(waves)
            }
        }
    }

    fn join(&mut self) -> Result<(), BoxError> {
        let scores = ScoreTable::load(self.layout.scores())?;
        let waves = self.survey_waves(&scores)?;
        let options = JoinOptions {
            allow_misaligned: self.cfg.analysis.allow_misaligned,
            diets: self.diet_info()?,
            questions: load_questions(self.cfg.resolve(&self.cfg.questions))?
                .into_iter()
                .map(|q| (q.question_id.clone(), q))
                .collect(),
        };
        let data = join_scores_responses(&scores, &waves, &options)?;
        let path = self.layout.root.join("analysis_dataset.csv");
        self.write_csv_with(&path, |buf| Ok(data.write_csv(buf)?))?;
        let path = self.layout.analysis_rows();
        let mut f = self.create(&path)?;
        for row in &data.rows {
            serde_json::to_writer(&mut f, row)?;
            f.write_all(b"\n")?;
        }
        Ok(())
    }

    fn analyze(&mut self) -> Result<(), BoxError> {
        let text = fs::read_to_string(self.layout.analysis_rows())?;
        let rows = text.lines().map(serde_json::from_str::<AnalysisRow>).collect::<Result<Vec<_>, _>>()?;
        let data = AnalysisDataset { rows };
        let a = &self.cfg.analysis;
        let seed = self.cfg.seed;
        let dir = self.layout.analysis_dir();

        let x: Vec<f64> = data.rows.iter().map(|r| r.score).collect();
        let y: Vec<f64> = data.rows.iter().map(|r| r.proportion).collect();
        let overall = GroupedCorrelation {
            group: "all".into(),
            n: x.len(),
            correlation: pearson_bootstrap(&x, &y, a.bootstrap, seed).ok(),
            note: String::new(),
        };
        let groups = a.group_by.clone();
        let bootstrap = a.bootstrap;
        self.write_csv_with(&dir.join("correlation_overall.csv"), |buf| Ok(write_correlations_csv(buf, &[overall])?))?;
        for g in groups {
            let rows = grouped_correlations(&data, g, bootstrap, seed);
            let name = serde_json::to_value(g)?.as_str().unwrap_or("group").to_string();
            self.write_csv_with(&dir.join(format!("correlations_{name}.csv")), |buf| {
                Ok(write_correlations_csv(buf, &rows)?)
            })?;
        }

        let mut fits: Vec<RegressionFit> = Vec::new();
        for model in self.cfg.analysis.models.clone() {
            match fit_ols(&data, model, OlsOptions { bootstrap, seed }) {
                Ok(fit) => {
                    let path = self.layout.fit(model);
                    self.write_json(&path, &fit)?;
                    fits.push(fit);
                }
                Err(e) => self.report.warnings.push(format!("{}: {e}", model.name())),
            }
        }
        let refs: Vec<&RegressionFit> = fits.iter().collect();
        self.write_csv_with(&dir.join("table1.csv"), |buf| {
            buf.extend_from_slice(b"# rmse: RMSE (this toolkit's definition), in-sample root-mean-squared residual\n");
            Ok(write_table1(buf, &refs)?)
        })?;

        if self.cfg.analysis.gam {
            match fit_gam(&data, GamOptions { bootstrap, seed, ..Default::default() }) {
                Ok(g) => {
                    if !g.converged {
                        self.report.warnings.push(format!(
                            "GAM backfitting stopped after {} iterations without converging",
                            g.iterations
                        ));
                    }
                    self.write_json(&dir.join("gam.json"), &g)?;
                }
                Err(e) => self.report.warnings.push(format!("gam: {e}")),
            }
        }
        Ok(())
    }

    fn explain(&mut self) -> Result<(), BoxError> {
        let Some(e) = self.cfg.explain.clone() else {
            self.report.warnings.push("no explain section in config; skipped".into());
            return Ok(());
        };
        let prompts = load_prompts(self.cfg.resolve(&self.cfg.prompts))?;
        let prompt = prompts
            .iter()
            .find(|p| p.prompt_id == e.prompt_id)
            .ok_or_else(|| format!("prompt {} not found", e.prompt_id))?;
        let dataset = self.load_dataset(&e.dataset)?;
        let backend = self.open(&e.backend)?;
        let options = ExplainOptions { cache_dir: Some(self.layout.root.join("embeddings")), ..Default::default() };
        let result = nearest_training_sentences(&prompt.filled(&e.fill), &dataset, backend.as_ref(), e.k, &options)?;
        let stem = self.layout.root.join("explain").join(format!("{}_{}_{}", e.prompt_id, e.fill, e.dataset));
        self.write_json(&stem.with_extension("json"), &result)?;
        self.write_csv_with(&stem.with_extension("csv"), |buf| Ok(result.write_csv(buf)?))
    }

    fn rolling(&mut self) -> Result<(), BoxError> {
        let Some(r) = self.cfg.rolling.clone() else {
            self.report.warnings.push("no rolling section in config; skipped".into());
            return Ok(());
        };
        let text = fs::read_to_string(self.layout.fit(OlsModel::Model1))?;
        let doc: Value = serde_json::from_str(&text)?;
        let fit: RegressionFit = serde_json::from_value(doc["result"].clone())?;
        let prompts = self.prompts(r.prompts.as_ref().unwrap_or(&self.cfg.prompts).clone().as_path())?;
        let base = self.open(&self.cfg.base)?;
        let mut windows = Vec::new();
        for w in &r.windows {
            let model = match &w.backend {
                Some(b) => Some(self.open(b)?),
                None => None,
            };
            windows.push((RollingWindow { window_id: w.window_id.clone(), start: w.start, end: w.end }, model));
        }
        let observed = if self.layout.survey().exists() {
            load_survey_csv(self.layout.survey(), &SurveyColumns::default())?
        } else {
            Vec::new()
        };
        let rows = rolling_predict(&windows, base.as_ref(), &prompts, &fit, &observed, r.diet_id.as_deref())?;
        let gaps = rows.iter().filter(|r| !r.gap.is_empty()).count();
        if gaps > 0 {
            self.report.warnings.push(format!("{gaps} rolling prediction(s) are gaps"));
        }
        let path = self.layout.root.join("rolling.csv");
        self.write_csv_with(&path, |buf| Ok(write_rolling_csv(buf, &rows)?))
    }
}

fn check_dependencies(cfg: &PipelineConfig, layout: &Layout, stages: &BTreeSet<Stage>) -> Result<(), PipelineError> {
    let need = |stage: Stage, artifact: PathBuf, producer: Stage| {
        if stages.contains(&producer) || artifact.exists() {
            Ok(())
        } else {
            Err(PipelineError::Dependency { stage, artifact: artifact.display().to_string(), producer })
        }
    };
    let trained = |b: &BackendConfig| {
        b.dataset.as_ref().map(|ds| match b.kind {
            BackendKind::Ngram => layout.ngram_model(ds),
            _ => layout.unigram_table(ds),
        })
    };
    let dataset_file = |id: &str| MediaDietDataset::data_path(&layout.datasets(), id);
    for &stage in stages {
        match stage {
            Stage::Ingest => {}
            Stage::Train => {
                for (_, b) in cfg.backends() {
                    if let Some(ds) = &b.dataset {
                        need(stage, dataset_file(ds), Stage::Ingest)?;
                    }
                }
            }
            Stage::Score => {
                for b in std::iter::once(&cfg.base).chain(cfg.diets.iter().map(|d| &d.backend)) {
                    if let Some(p) = trained(b) {
                        need(stage, p, Stage::Train)?;
                    }
                }
            }
            Stage::Join => {
                need(stage, layout.scores(), Stage::Score)?;
                for d in &cfg.diets {
                    if let Some(ds) = d.dataset.as_ref().or(d.backend.dataset.as_ref()) {
                        need(stage, MediaDietDataset::manifest_path(&layout.datasets(), ds), Stage::Ingest)?;
                    }
                }
            }
            Stage::Analyze => need(stage, layout.analysis_rows(), Stage::Join)?,
            Stage::Explain => {
                if let Some(e) = &cfg.explain {
                    need(stage, dataset_file(&e.dataset), Stage::Ingest)?;
                }
            }
            Stage::Rolling => {
                if let Some(r) = &cfg.rolling {
                    need(stage, layout.fit(OlsModel::Model1), Stage::Analyze)?;
                    if let Some(p) = trained(&cfg.base) {
                        need(stage, p, Stage::Train)?;
                    }
                    for b in r.windows.iter().filter_map(|w| w.backend.as_ref()) {
                        if let Some(p) = trained(b) {
                            need(stage, p, Stage::Train)?;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct RunManifest<'a> {
    config_sha256: &'a str,
    seed: u64,
    stages: Vec<&'static str>,
    status: &'a str,
    model_tags: BTreeMap<String, String>,
    versions: BTreeMap<&'static str, String>,
    artifacts: Vec<String>,
    warnings: Vec<String>,
}

/// Runs `stages` (in dependency order, whatever order they are given in).
/// On stage failure the downstream stages are skipped, artifacts already
/// written stay in place, and a `FAILED` marker names the failing stage.
pub fn run_pipeline(cfg: &PipelineConfig, stages: &[Stage]) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let layout = Layout { root: cfg.resolve(&cfg.output_dir) };
    let stages: BTreeSet<Stage> =
        if stages.is_empty() { Stage::ALL.into_iter().collect() } else { stages.iter().copied().collect() };
    check_dependencies(cfg, &layout, &stages)?;
    fs::create_dir_all(&layout.root).map_err(|e| config_err("output_dir", e.to_string()))?;
    let _ = fs::remove_file(layout.failed_marker());

    let hash = cfg.hash();
    let mut report = RunReport { config_sha256: hash.clone(), ..Default::default() };
    let mut run = Run {
        cfg,
        layout: layout.clone(),
        hash: hash.clone(),
        gateway: GatewayOptions::default(),
        report: StageReport::default(),
    };
    let mut failure = None;
    for &stage in &stages {
        run.report = StageReport { stage: stage.to_string(), ..Default::default() };
        log::info!("running stage {stage}");
        let result = match stage {
            Stage::Ingest => run.ingest(),
            Stage::Train => run.train(),
            Stage::Score => run.score(),
            Stage::Join => run.join(),
            Stage::Analyze => run.analyze(),
            Stage::Explain => run.explain(),
            Stage::Rolling => run.rolling(),
        };
        for w in &run.report.warnings {
            log::warn!("{stage}: {w}");
        }
        report.stages.push(std::mem::take(&mut run.report));
        if let Err(e) = result {
            let _ = fs::write(layout.failed_marker(), format!("stage: {stage}\nerror: {}\n", error_chain(e.as_ref())));
            report.failed = Some(stage.to_string());
            failure = Some(stage_err(stage)(e));
            break;
        }
    }

    let mut model_tags = BTreeMap::new();
    model_tags.insert("base".to_string(), cfg.base.model_tag.clone());
    for d in &cfg.diets {
        model_tags.insert(d.diet_id.clone(), d.backend.model_tag.clone());
    }
    let mut versions = BTreeMap::new();
    versions.insert("mediadiet", env!("CARGO_PKG_VERSION").to_string());
    versions.insert("stopwords", crate::paraphrase::STOPWORDS_VERSION.to_string());
    let manifest = RunManifest {
        config_sha256: &hash,
        seed: cfg.seed,
        stages: stages.iter().map(|s| s.as_str()).collect(),
        status: if failure.is_some() { "failed" } else { "ok" },
        model_tags,
        versions,
        artifacts: report.stages.iter().flat_map(|s| s.artifacts.iter().cloned()).collect(),
        warnings: report
            .stages
            .iter()
            .flat_map(|s| s.warnings.iter().map(move |w| format!("{}: {w}", s.stage)))
            .collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    if let Err(e) = fs::write(layout.manifest(), text) {
        log::error!("could not write run manifest: {e}");
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// Parses a comma-separated stage list.
pub fn parse_stages(list: &str) -> Result<Vec<Stage>, PipelineError> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse().map_err(|e: String| config_err("stages", e)))
        .collect()
}
