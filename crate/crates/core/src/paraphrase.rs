//! Prompt paraphrasing (embedding-neighbor synonym substitution and
//! backtranslation through an external MT endpoint) and the robustness
//! comparison of correlations across paraphrase settings.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use crate::analysis::{pearson_bootstrap, AnalysisError, CorrelationResult};
use crate::backend::{GatewayError, Transport};
use crate::probe::{PromptSpec, ScoreTable, Variant, BLANK};
use crate::survey::SurveyWave;

/// Bumped whenever [`STOPWORDS`] changes.
pub const STOPWORDS_VERSION: u32 = 1;

/// Function words never considered for substitution.
pub const STOPWORDS: &[&str] = &[
    "a",
    "about",
    "above",
    "after",
    "again",
    "against",
    "all",
    "am",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "because",
    "been",
    "before",
    "being",
    "below",
    "between",
    "both",
    "but",
    "by",
    "can",
    "could",
    "did",
    "do",
    "does",
    "doing",
    "down",
    "during",
    "each",
    "few",
    "for",
    "from",
    "further",
    "had",
    "has",
    "have",
    "having",
    "he",
    "her",
    "here",
    "hers",
    "herself",
    "him",
    "himself",
    "his",
    "how",
    "i",
    "if",
    "in",
    "into",
    "is",
    "it",
    "its",
    "itself",
    "just",
    "me",
    "more",
    "most",
    "my",
    "myself",
    "no",
    "nor",
    "not",
    "now",
    "of",
    "off",
    "on",
    "once",
    "only",
    "or",
    "other",
    "our",
    "ours",
    "ourselves",
    "out",
    "over",
    "own",
    "same",
    "she",
    "should",
    "so",
    "some",
    "such",
    "than",
    "that",
    "the",
    "their",
    "theirs",
    "them",
    "themselves",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "through",
    "to",
    "too",
    "under",
    "until",
    "up",
    "very",
    "was",
    "we",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "who",
    "whom",
    "why",
    "will",
    "with",
    "would",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
];

pub const DEFAULT_MAX_SUBS: usize = 2;
pub const DEFAULT_MIN_COS: f64 = 0.6;
pub const DEFAULT_BT_SAMPLES: usize = 25;
pub const DEFAULT_BT_TOPK: usize = 20;
pub const DEFAULT_PIVOT: &str = "nl";
/// Stands in for the blank marker while text goes through translation.
pub const DEFAULT_PLACEHOLDER: &str = "ZZBLANKZZ";

#[derive(Debug, Error)]
pub enum ParaphraseError {
    #[error("embedding table: {0}")]
    Table(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("coverage mismatch between original and {setting} scores: {detail}")]
    CoverageMismatch { setting: String, detail: String },
    #[error("no survey proportion for diet {diet_id}, question {question_id}, answer {answer_label:?}")]
    MissingResponse { diet_id: String, question_id: String, answer_label: String },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(vectors: BTreeMap<String, Vec<f64>>) -> Result<Self, ParaphraseError> {
        let dim = vectors.values().next().map(Vec::len).unwrap_or(0);
        if let Some((t, _)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(ParaphraseError::Table(format!("vector for {t:?} has wrong dimension")));
        }
        Ok(EmbeddingTable { dim, vectors })
    }

    /// Reads `token v1 v2 ... vd` lines. A leading word2vec-style header
    /// (`count dim`) is skipped.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, ParaphraseError> {
        let mut vectors = BTreeMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| ParaphraseError::Table(e.to_string()))?;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values: Vec<f64> = fields
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| ParaphraseError::Table(format!("line {}: {e}", idx + 1)))?;
            if idx == 0 && values.len() == 1 && token.parse::<usize>().is_ok() {
                continue;
            }
            vectors.insert(token.to_string(), values);
        }
        Self::new(vectors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ParaphraseError> {
        let f = std::fs::File::open(path.as_ref())
            .map_err(|e| ParaphraseError::Table(format!("{}: {e}", path.as_ref().display())))?;
        Self::read(std::io::BufReader::new(f))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Most cosine-similar other entry, skipping `exclude`. Ties go to the
    /// lexicographically smallest token.
    pub fn nearest(&self, token: &str, exclude: &BTreeSet<String>) -> Option<(&str, f64)> {
        let query = self.vectors.get(token)?;
        let qn = norm(query);
        if qn == 0.0 {
            return None;
        }
        let mut best: Option<(&str, f64)> = None;
        for (other, v) in &self.vectors {
            if other == token || exclude.contains(other) {
                continue;
            }
            let vn = norm(v);
            if vn == 0.0 {
                continue;
            }
            let cos = dot(query, v) / (qn * vn);
            if best.is_none_or(|(_, b)| cos > b) {
                best = Some((other.as_str(), cos));
            }
        }
        best
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParaphraseMethod {
    Synsub,
    Backtranslation,
}

impl ParaphraseMethod {
    pub fn variant(self) -> Variant {
        match self {
            ParaphraseMethod::Synsub => Variant::Synsub,
            ParaphraseMethod::Backtranslation => Variant::Backtranslation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseSet {
    pub source_prompt_id: String,
    pub method: ParaphraseMethod,
    pub variants: Vec<PromptSpec>,
}

fn make_variant(source: &PromptSpec, method: ParaphraseMethod, idx: usize, template: String) -> PromptSpec {
    let tag = match method {
        ParaphraseMethod::Synsub => "synsub",
        ParaphraseMethod::Backtranslation => "bt",
    };
    PromptSpec {
        prompt_id: format!("{}~{tag}{idx}", source.prompt_id),
        template,
        targets: source.targets.clone(),
        question_id: source.question_id.clone(),
        variant: method.variant(),
        source_prompt_id: Some(source.prompt_id.clone()),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SynsubParams {
    pub max_subs: usize,
    pub min_cos: f64,
}

impl Default for SynsubParams {
    fn default() -> Self {
        SynsubParams { max_subs: DEFAULT_MAX_SUBS, min_cos: DEFAULT_MIN_COS }
    }
}

/// A substitution chosen for one word of the template.
#[derive(Debug, Clone, PartialEq)]
pub struct Substitution {
    /// Byte offset of the word in the template.
    pub offset: usize,
    pub original: String,
    pub replacement: String,
    pub cosine: f64,
}

fn match_case(original: &str, replacement: &str) -> String {
    let mut chars = original.chars();
    match chars.next() {
        Some(c) if c.is_uppercase() => {
            let mut r = replacement.chars();
            r.next().map(|f| f.to_uppercase().chain(r).collect()).unwrap_or_default()
        }
        _ => replacement.to_string(),
    }
}

/// Substitutions that [`synonym_substitute`] would apply, best first.
pub fn plan_substitutions(prompt: &PromptSpec, table: &EmbeddingTable, params: SynsubParams) -> Vec<Substitution> {
    let protected: BTreeSet<String> = prompt
        .targets
        .iter()
        .flat_map(|t| std::iter::once(&t.word).chain(&t.synonyms))
        .map(|w| w.to_lowercase())
        .collect();
    let blank_at = prompt.template.find(BLANK);
    let mut found = Vec::new();
    for (offset, seg) in prompt.template.split_word_bound_indices() {
        if let Some(b) = blank_at {
            if offset >= b && offset < b + BLANK.len() {
                continue;
            }
        }
        if !seg.chars().any(char::is_alphabetic) {
            continue;
        }
        let lower = seg.to_lowercase();
        if STOPWORDS.contains(&lower.as_str()) || protected.contains(&lower) {
            continue;
        }
        if let Some((nn, cos)) = table.nearest(&lower, &protected) {
            if cos >= params.min_cos {
                found.push(Substitution {
                    offset,
                    original: seg.to_string(),
                    replacement: match_case(seg, nn),
                    cosine: cos,
                });
            }
        }
    }
    found.sort_by(|a, b| b.cosine.total_cmp(&a.cosine).then(a.offset.cmp(&b.offset)));
    found.truncate(params.max_subs);
    found
}

/// Replaces up to `max_subs` content words by their nearest embedding
/// neighbor. Without an eligible word the only variant is the source text.
pub fn synonym_substitute(
    prompt: &PromptSpec,
    table: &EmbeddingTable,
    params: SynsubParams,
) -> Result<ParaphraseSet, ParaphraseError> {
    if table.is_empty() {
        return Err(ParaphraseError::InvalidParams("embedding table is empty".into()));
    }
    if !(params.min_cos > 0.0 && params.min_cos < 1.0) {
        return Err(ParaphraseError::InvalidParams(format!("min_cos must lie in (0, 1), got {}", params.min_cos)));
    }
    let mut subs = plan_substitutions(prompt, table, params);
    subs.sort_by_key(|s| std::cmp::Reverse(s.offset));
    let mut template = prompt.template.clone();
    for s in &subs {
        template.replace_range(s.offset..s.offset + s.original.len(), &s.replacement);
    }
    Ok(ParaphraseSet {
        source_prompt_id: prompt.prompt_id.clone(),
        method: ParaphraseMethod::Synsub,
        variants: vec![make_variant(prompt, ParaphraseMethod::Synsub, 1, template)],
    })
}

/// Decoding mode requested from the MT endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sampling {
    TopK { topk: usize },
    Greedy(GreedyTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GreedyTag {
    Greedy,
}

impl Sampling {
    pub fn greedy() -> Self {
        Sampling::Greedy(GreedyTag::Greedy)
    }
}

/// Client for `POST /translate {"text","direction","sampling","n"} -> {"outputs"}`.
pub struct MtClient {
    transport: Arc<dyn Transport>,
}

#[derive(Deserialize)]
struct TranslateWire {
    outputs: Vec<String>,
}

impl MtClient {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        MtClient { transport }
    }

    pub fn translate(
        &self,
        text: &str,
        direction: &str,
        sampling: &Sampling,
        n: usize,
    ) -> Result<Vec<String>, GatewayError> {
        let body = json!({ "text": text, "direction": direction, "sampling": sampling, "n": n });
        let raw = self.transport.post("/translate", &body)?;
        let wire: TranslateWire =
            serde_json::from_value(raw).map_err(|e| GatewayError::Protocol(format!("/translate response: {e}")))?;
        Ok(wire.outputs)
    }
}

#[derive(Debug, Clone)]
pub struct BacktranslateParams {
    pub n_samples: usize,
    pub topk: usize,
    pub pivot: String,
    pub placeholder: String,
}

impl Default for BacktranslateParams {
    fn default() -> Self {
        BacktranslateParams {
            n_samples: DEFAULT_BT_SAMPLES,
            topk: DEFAULT_BT_TOPK,
            pivot: DEFAULT_PIVOT.to_string(),
            placeholder: DEFAULT_PLACEHOLDER.to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BacktranslateReport {
    pub returned: usize,
    pub lost_placeholder: usize,
    pub duplicates: usize,
    pub warnings: Vec<String>,
}

/// Paraphrases a prompt by sampling translations into the pivot language
/// and greedily translating each sample back.
pub fn backtranslate(
    prompt: &PromptSpec,
    mt: &MtClient,
    params: &BacktranslateParams,
) -> Result<(ParaphraseSet, BacktranslateReport), ParaphraseError> {
    if params.n_samples == 0 || params.topk == 0 {
        return Err(ParaphraseError::InvalidParams("n_samples and topk must be positive".into()));
    }
    let protected = prompt.template.replace(BLANK, &params.placeholder);
    let forward = format!("en-{}", params.pivot);
    let backward = format!("{}-en", params.pivot);
    let samples = mt.translate(&protected, &forward, &Sampling::TopK { topk: params.topk }, params.n_samples)?;
    let mut report = BacktranslateReport::default();
    let mut seen = BTreeSet::new();
    let mut variants = Vec::new();
    for sample in samples.iter().take(params.n_samples) {
        let back = mt.translate(sample, &backward, &Sampling::greedy(), 1)?;
        let Some(text) = back.into_iter().next() else {
            report.lost_placeholder += 1;
            continue;
        };
        report.returned += 1;
        if text.matches(&params.placeholder).count() != 1 {
            report.lost_placeholder += 1;
            continue;
        }
        let restored = text.replacen(&params.placeholder, BLANK, 1).trim().to_string();
        if !seen.insert(restored.clone()) {
            report.duplicates += 1;
            continue;
        }
        variants.push(make_variant(prompt, ParaphraseMethod::Backtranslation, variants.len() + 1, restored));
    }
    if variants.is_empty() {
        let w = format!("{}: every backtranslation was discarded", prompt.prompt_id);
        log::warn!("{w}");
        report.warnings.push(w);
    }
    Ok((
        ParaphraseSet {
            source_prompt_id: prompt.prompt_id.clone(),
            method: ParaphraseMethod::Backtranslation,
            variants,
        },
        report,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessRow {
    pub setting: Variant,
    pub correlation: CorrelationResult,
}

type CellKey = (String, String, String);

/// Mean score per (diet, question, target) over the prompts of one setting,
/// with the answer label carried along.
fn mean_scores(table: &ScoreTable, setting: Variant) -> BTreeMap<CellKey, (f64, String)> {
    let mut acc: BTreeMap<CellKey, (f64, usize, String)> = BTreeMap::new();
    for r in table.rows.iter().filter(|r| r.variant == setting) {
        let Some(s) = r.score.filter(|_| r.error.is_empty()) else { continue };
        let e = acc.entry((r.diet_id.clone(), r.question_id.clone(), r.target_word.clone())).or_insert((
            0.0,
            0,
            r.answer_label.clone(),
        ));
        e.0 += s;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (sum, n, label))| (k, (sum / n as f64, label))).collect()
}

fn coverage(cells: &BTreeMap<CellKey, (f64, String)>) -> BTreeSet<(String, String)> {
    cells.keys().map(|(d, q, _)| (d.clone(), q.clone())).collect()
}

/// Correlation between survey proportions and per-prompt mean scores for
/// the original prompts and each paraphrase setting present in
/// `variant_scores`.
pub fn robustness_eval(
    orig_scores: &ScoreTable,
    variant_scores: &ScoreTable,
    waves: &[SurveyWave],
    bootstrap: usize,
    seed: u64,
) -> Result<Vec<RobustnessRow>, ParaphraseError> {
    let by_key: BTreeMap<(&str, &str), &SurveyWave> =
        waves.iter().map(|w| ((w.diet_id.as_str(), w.question_id.as_str()), w)).collect();
    let orig = mean_scores(orig_scores, Variant::Orig);
    let orig_cov = coverage(&orig);
    let mut settings: Vec<(Variant, BTreeMap<CellKey, (f64, String)>)> = vec![(Variant::Orig, orig)];
    for setting in [Variant::Synsub, Variant::Backtranslation] {
        let cells = mean_scores(variant_scores, setting);
        if cells.is_empty() {
            continue;
        }
        let cov = coverage(&cells);
        if cov != orig_cov {
            let missing: Vec<_> = orig_cov.symmetric_difference(&cov).take(5).collect();
            return Err(ParaphraseError::CoverageMismatch {
                setting: setting.to_string(),
                detail: format!("{} key(s) differ, e.g. {missing:?}", orig_cov.symmetric_difference(&cov).count()),
            });
        }
        settings.push((setting, cells));
    }
    let mut out = Vec::new();
    for (setting, cells) in settings {
        let mut xs = Vec::with_capacity(cells.len());
        let mut ys = Vec::with_capacity(cells.len());
        for ((diet, question, _), (score, label)) in &cells {
            let p = by_key.get(&(diet.as_str(), question.as_str())).and_then(|w| w.proportions.get(label)).ok_or_else(
                || ParaphraseError::MissingResponse {
                    diet_id: diet.clone(),
                    question_id: question.clone(),
                    answer_label: label.clone(),
                },
            )?;
            xs.push(*score);
            ys.push(*p);
        }
        out.push(RobustnessRow { setting, correlation: pearson_bootstrap(&xs, &ys, bootstrap, seed)? });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::TargetSpec;
    use serde_json::Value;
    use std::sync::Mutex;

    fn prompt(template: &str) -> PromptSpec {
        PromptSpec {
            prompt_id: "close".into(),
            template: template.into(),
            targets: vec![
                TargetSpec::new("necessary", &["required"], "necessary"),
                TargetSpec::new("unnecessary", &[], "unnecessary"),
            ],
            question_id: "q1".into(),
            variant: Variant::Orig,
            source_prompt_id: None,
        }
    }

    fn table(entries: &[(&str, &[f64])]) -> EmbeddingTable {
        EmbeddingTable::new(entries.iter().map(|(t, v)| (t.to_string(), v.to_vec())).collect()).unwrap()
    }

    #[test]
    fn no_eligible_word_returns_source_text() {
        let t = table(&[("businesses", &[1.0, 0.0]), ("companies", &[0.8, 0.6])]);
        let p = prompt("It is [BLANK].");
        let set = synonym_substitute(&p, &t, SynsubParams::default()).unwrap();
        assert_eq!(set.variants.len(), 1);
        assert_eq!(set.variants[0].template, p.template);
        assert_eq!(set.variants[0].targets, p.targets);
    }

    #[test]
    fn constructed_neighbor_is_substituted() {
        // cos(businesses, companies) = 0.8
        let t = table(&[("businesses", &[1.0, 0.0]), ("companies", &[0.8, 0.6]), ("close", &[0.0, 1.0])]);
        let p = prompt("Requiring most businesses to close is [BLANK].");
        let set = synonym_substitute(&p, &t, SynsubParams { max_subs: 1, min_cos: 0.6 }).unwrap();
        assert_eq!(set.variants[0].template, "Requiring most companies to close is [BLANK].");
        assert_eq!(set.variants[0].variant, Variant::Synsub);
    }

    #[test]
    fn targets_and_blank_are_protected() {
        let t = table(&[
            ("necessary", &[1.0, 0.0]),
            ("needed", &[1.0, 0.01]),
            ("blank", &[0.0, 1.0]),
            ("void", &[0.0, 1.0]),
        ]);
        let p = prompt("Necessary or not, it is [BLANK].");
        let set = synonym_substitute(&p, &t, SynsubParams::default()).unwrap();
        assert_eq!(set.variants[0].template, p.template);
    }

    #[test]
    fn capitalization_follows_original() {
        assert_eq!(match_case("Businesses", "companies"), "Companies");
        assert_eq!(match_case("businesses", "companies"), "companies");
    }

    #[test]
    fn rejects_bad_threshold() {
        let t = table(&[("a", &[1.0])]);
        assert!(synonym_substitute(&prompt("[BLANK]"), &t, SynsubParams { max_subs: 1, min_cos: 1.0 }).is_err());
    }

    /// Echoes its input `n` times.
    struct EchoMt;

    impl Transport for EchoMt {
        fn post(&self, _path: &str, body: &Value) -> Result<Value, GatewayError> {
            let n = body["n"].as_u64().unwrap() as usize;
            Ok(json!({ "outputs": vec![body["text"].clone(); n] }))
        }
        fn describe(&self) -> String {
            "echo".into()
        }
    }

    #[test]
    fn identity_mt_collapses_to_source() {
        let p = prompt("Closing shops is [BLANK].");
        let mt = MtClient::new(Arc::new(EchoMt));
        let (set, report) = backtranslate(&p, &mt, &BacktranslateParams::default()).unwrap();
        assert_eq!(set.variants.len(), 1);
        assert_eq!(set.variants[0].template, p.template);
        assert_eq!(report.duplicates, 24);
    }

    /// Returns canned outputs and records requests.
    struct ScriptedMt {
        forward: Vec<String>,
        requests: Mutex<Vec<Value>>,
    }

    impl Transport for ScriptedMt {
        fn post(&self, _path: &str, body: &Value) -> Result<Value, GatewayError> {
            self.requests.lock().unwrap().push(body.clone());
            if body["direction"] == "en-nl" {
                Ok(json!({ "outputs": self.forward }))
            } else {
                Ok(json!({ "outputs": [format!("back {}", body["text"].as_str().unwrap())] }))
            }
        }
        fn describe(&self) -> String {
            "scripted".into()
        }
    }

    #[test]
    fn lost_placeholder_discarded_and_wire_format() {
        let forward = vec![
            "a ZZBLANKZZ".to_string(),
            "b zonder".to_string(),
            "a ZZBLANKZZ".to_string(),
            "c ZZBLANKZZ ZZBLANKZZ".to_string(),
        ];
        let mt = Arc::new(ScriptedMt { forward, requests: Mutex::new(Vec::new()) });
        let client = MtClient::new(mt.clone());
        let p = prompt("Closing shops is [BLANK].");
        let (set, report) = backtranslate(&p, &client, &BacktranslateParams::default()).unwrap();
        let templates: Vec<_> = set.variants.iter().map(|v| v.template.as_str()).collect();
        assert_eq!(templates, ["back a [BLANK]"]);
        assert_eq!(report.lost_placeholder, 2);
        assert_eq!(report.duplicates, 1);
        let reqs = mt.requests.lock().unwrap();
        assert_eq!(
            reqs[0],
            json!({"text": "Closing shops is ZZBLANKZZ.", "direction": "en-nl", "sampling": {"topk": 20}, "n": 25})
        );
        assert_eq!(reqs[1]["sampling"], json!("greedy"));
    }

    #[test]
    fn all_discarded_warns() {
        let mt = Arc::new(ScriptedMt { forward: vec!["kwijt".into()], requests: Mutex::new(Vec::new()) });
        let (set, report) =
            backtranslate(&prompt("x [BLANK]"), &MtClient::new(mt), &BacktranslateParams::default()).unwrap();
        assert!(set.variants.is_empty());
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn table_reader_skips_header() {
        let t = EmbeddingTable::read("2 3\na 1 0 0\nb 0 1 0\n".as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.dim(), 3);
        assert!(EmbeddingTable::read("a 1 0\nb 1\n".as_bytes()).is_err());
    }
}
