//! Cloze prompts derived from survey questions and the media diet score.
//!
//! For a target word `w` with synonym set `syn(w)`, the score of a diet
//! model against the base model is
//!
//! ```text
//! s = sum_{w' in {w} + syn(w)} P_diet(w' | prompt) / max(P_base(w | prompt), eps)
//! ```
//!
//! The denominator uses the head word only.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{fill_probabilities, GatewayError, MaskedScorer, PROB_FLOOR};
use crate::corpus::tokenize;

/// Literal blank marker in prompt templates.
pub const BLANK: &str = "[BLANK]";

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("prompt {prompt_id}: {message}")]
    InvalidPrompt { prompt_id: String, message: String },
    #[error("head word {word:?} is not supported by backend {model_tag}: {reason}")]
    HeadWordOov { word: String, model_tag: String, reason: String },
    #[error("base probability of {word:?} is {prob} (<= {PROB_FLOOR}); score undefined")]
    DegenerateDenominator { word: String, prob: f64 },
    #[error("mixed model tags in score table: {0}")]
    MixedTags(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl ProbeError {
    fn file(path: &Path, message: impl ToString) -> Self {
        ProbeError::File { path: path.display().to_string(), message: message.to_string() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Orig,
    Synsub,
    Backtranslation,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Orig => "orig",
            Variant::Synsub => "synsub",
            Variant::Backtranslation => "backtranslation",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub word: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
    /// Survey choice this target stands for, e.g. "a major threat".
    pub answer_label: String,
}

impl TargetSpec {
    pub fn new(word: &str, synonyms: &[&str], answer_label: &str) -> Self {
        TargetSpec {
            word: word.to_string(),
            synonyms: synonyms.iter().map(|s| s.to_string()).collect(),
            answer_label: answer_label.to_string(),
        }
    }

    /// Head word followed by its synonyms, without duplicates.
    pub fn candidates(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        std::iter::once(&self.word).chain(&self.synonyms).filter(|w| seen.insert(w.as_str())).cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub prompt_id: String,
    pub template: String,
    pub targets: Vec<TargetSpec>,
    pub question_id: String,
    #[serde(default)]
    pub variant: Variant,
    /// For paraphrases, the prompt this variant was derived from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_prompt_id: Option<String>,
}

fn is_single_token(word: &str) -> bool {
    tokenize(word).len() == 1
}

impl PromptSpec {
    pub fn validate(&self) -> Result<(), ProbeError> {
        let bad = |message: String| ProbeError::InvalidPrompt { prompt_id: self.prompt_id.clone(), message };
        let blanks = self.template.matches(BLANK).count();
        if blanks != 1 {
            return Err(bad(format!("expected exactly one {BLANK}, found {blanks}")));
        }
        if self.targets.is_empty() {
            return Err(bad("no targets".into()));
        }
        let mut words = BTreeSet::new();
        for t in &self.targets {
            if !words.insert(t.word.as_str()) {
                return Err(bad(format!("duplicate target {:?}", t.word)));
            }
            if !is_single_token(&t.word) {
                return Err(bad(format!("target {:?} is not a single token", t.word)));
            }
            if t.synonyms.contains(&t.word) {
                return Err(bad(format!("target {:?} lists itself as a synonym", t.word)));
            }
            if let Some(s) = t.synonyms.iter().find(|s| !is_single_token(s)) {
                return Err(bad(format!("synonym {s:?} is not a single token")));
            }
        }
        Ok(())
    }

    /// Tokens left and right of the blank.
    pub fn context_tokens(&self) -> Result<(Vec<String>, Vec<String>), ProbeError> {
        let mut parts = self.template.split(BLANK);
        match (parts.next(), parts.next(), parts.next()) {
            (Some(left), Some(right), None) => Ok((tokenize(left), tokenize(right))),
            _ => Err(ProbeError::InvalidPrompt {
                prompt_id: self.prompt_id.clone(),
                message: format!("expected exactly one {BLANK}"),
            }),
        }
    }

    /// The template with the blank replaced by `word`.
    pub fn filled(&self, word: &str) -> String {
        self.template.replacen(BLANK, word, 1)
    }

    pub fn target(&self, word: &str) -> Option<&TargetSpec> {
        self.targets.iter().find(|t| t.word == word)
    }
}

pub fn load_prompts(path: impl AsRef<Path>) -> Result<Vec<PromptSpec>, ProbeError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ProbeError::file(path, e))?;
    let prompts: Vec<PromptSpec> = serde_json::from_str(&text).map_err(|e| ProbeError::file(path, e))?;
    for p in &prompts {
        p.validate()?;
    }
    Ok(prompts)
}

pub fn save_prompts(path: impl AsRef<Path>, prompts: &[PromptSpec]) -> Result<(), ProbeError> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(prompts).expect("prompts serialize");
    std::fs::write(path, json + "\n").map_err(|e| ProbeError::file(path, e))
}

/// Curated synonym sets keyed by head word.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SynonymLexicon(pub BTreeMap<String, Vec<String>>);

impl SynonymLexicon {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProbeError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ProbeError::file(path, e))?;
        serde_json::from_str(&text).map_err(|e| ProbeError::file(path, e))
    }

    /// Fills in synonyms for every target that has none. Multiword entries
    /// and the head word itself are dropped; the dropped entries are
    /// returned as warnings.
    pub fn apply(&self, prompts: &mut [PromptSpec]) -> Vec<String> {
        let mut warnings = Vec::new();
        for p in prompts.iter_mut() {
            for t in p.targets.iter_mut() {
                if !t.synonyms.is_empty() {
                    continue;
                }
                let Some(list) = self.0.get(&t.word) else { continue };
                for s in list {
                    if s == &t.word {
                        continue;
                    }
                    if !is_single_token(s) {
                        warnings.push(format!("{}: dropping multiword synonym {s:?} of {:?}", p.prompt_id, t.word));
                        continue;
                    }
                    if !t.synonyms.contains(s) {
                        t.synonyms.push(s.clone());
                    }
                }
            }
        }
        warnings
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub diet_id: String,
    pub prompt_id: String,
    pub question_id: String,
    pub variant: Variant,
    pub target_word: String,
    pub answer_label: String,
    pub base_prob: f64,
    /// Diet-model probabilities of the head word and each retained synonym.
    pub adapted_probs: BTreeMap<String, f64>,
    pub score: f64,
    pub model_tag_base: String,
    pub model_tag_diet: String,
    /// Synonyms dropped because the diet backend does not support them.
    pub dropped_synonyms: Vec<String>,
}

/// Computes the synonym-grouped media diet score of one target.
pub fn media_diet_score(
    diet_id: &str,
    diet: &dyn MaskedScorer,
    base: &dyn MaskedScorer,
    prompt: &PromptSpec,
    target: &TargetSpec,
) -> Result<ScoreRecord, ProbeError> {
    let candidates = target.candidates();
    let adapted = fill_probabilities(diet, prompt, &candidates)?;
    let base_resp = fill_probabilities(base, prompt, std::slice::from_ref(&target.word))?;

    for (resp, backend) in [(&adapted, diet), (&base_resp, base)] {
        if let Some(reason) = resp.unsupported.get(&target.word) {
            return Err(ProbeError::HeadWordOov {
                word: target.word.clone(),
                model_tag: backend.model_tag().to_string(),
                reason: reason.clone(),
            });
        }
    }

    let mut adapted_probs = BTreeMap::new();
    let mut dropped = Vec::new();
    let mut numerator = 0.0;
    for c in &candidates {
        if adapted.unsupported.contains_key(c) {
            log::warn!("{}: synonym {c:?} unsupported by {}; dropped", prompt.prompt_id, diet.model_tag());
            dropped.push(c.clone());
            continue;
        }
        let p = adapted.probs[c];
        numerator += p;
        adapted_probs.insert(c.clone(), p);
    }
    let base_prob = base_resp.probs[&target.word].max(PROB_FLOOR);
    if base_prob <= PROB_FLOOR {
        return Err(ProbeError::DegenerateDenominator { word: target.word.clone(), prob: base_prob });
    }
    Ok(ScoreRecord {
        diet_id: diet_id.to_string(),
        prompt_id: prompt.prompt_id.clone(),
        question_id: prompt.question_id.clone(),
        variant: prompt.variant,
        target_word: target.word.clone(),
        answer_label: target.answer_label.clone(),
        base_prob,
        adapted_probs,
        score: numerator / base_prob,
        model_tag_base: base_resp.model_tag,
        model_tag_diet: adapted.model_tag,
        dropped_synonyms: dropped,
    })
}

/// One row of the scores CSV. `score`/`base_prob` are empty when `error`
/// is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub diet_id: String,
    pub prompt_id: String,
    pub question_id: String,
    pub variant: Variant,
    pub target_word: String,
    pub answer_label: String,
    pub base_prob: Option<f64>,
    pub score: Option<f64>,
    pub model_tag_base: String,
    pub model_tag_diet: String,
    pub error: String,
}

impl From<&ScoreRecord> for ScoreRow {
    fn from(r: &ScoreRecord) -> Self {
        ScoreRow {
            diet_id: r.diet_id.clone(),
            prompt_id: r.prompt_id.clone(),
            question_id: r.question_id.clone(),
            variant: r.variant,
            target_word: r.target_word.clone(),
            answer_label: r.answer_label.clone(),
            base_prob: Some(r.base_prob),
            score: Some(r.score),
            model_tag_base: r.model_tag_base.clone(),
            model_tag_diet: r.model_tag_diet.clone(),
            error: String::new(),
        }
    }
}

impl ScoreRow {
    pub fn is_ok(&self) -> bool {
        self.error.is_empty() && self.score.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            (&a.diet_id, &a.prompt_id, &a.target_word).cmp(&(&b.diet_id, &b.prompt_id, &b.target_word))
        });
    }

    /// Rejects tables mixing base tags, or mixing diet tags within a diet.
    pub fn check_provenance(&self) -> Result<(), ProbeError> {
        let ok = self.rows.iter().filter(|r| r.is_ok());
        let bases: BTreeSet<&str> = ok.clone().map(|r| r.model_tag_base.as_str()).collect();
        if bases.len() > 1 {
            return Err(ProbeError::MixedTags(format!("base tags {bases:?}")));
        }
        let mut per_diet: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for r in ok {
            per_diet.entry(&r.diet_id).or_default().insert(&r.model_tag_diet);
        }
        if let Some((diet, tags)) = per_diet.iter().find(|(_, t)| t.len() > 1) {
            return Err(ProbeError::MixedTags(format!("diet {diet} has tags {tags:?}")));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ProbeError> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wtr.serialize(r)?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, ProbeError> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let rows = rdr.deserialize().collect::<Result<Vec<ScoreRow>, _>>()?;
        Ok(ScoreTable { rows })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProbeError> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| ProbeError::file(path, e))?;
        Self::read_csv(f)
    }
}

/// Scores every (diet, prompt, target) cell. Cell failures are recorded in
/// the row's `error` column; rows come back in canonical sorted order.
pub fn score_matrix(
    diets: &[(String, Arc<dyn MaskedScorer>)],
    base: &dyn MaskedScorer,
    prompts: &[PromptSpec],
) -> ScoreTable {
    let cells: Vec<(&String, &Arc<dyn MaskedScorer>, &PromptSpec, &TargetSpec)> = diets
        .iter()
        .flat_map(|(id, b)| prompts.iter().flat_map(move |p| p.targets.iter().map(move |t| (id, b, p, t))))
        .collect();
    let rows: Vec<ScoreRow> = cells
        .par_iter()
        .map(|(diet_id, diet, prompt, target)| match media_diet_score(diet_id, diet.as_ref(), base, prompt, target) {
            Ok(rec) => ScoreRow::from(&rec),
            Err(e) => ScoreRow {
                diet_id: diet_id.to_string(),
                prompt_id: prompt.prompt_id.clone(),
                question_id: prompt.question_id.clone(),
                variant: prompt.variant,
                target_word: target.word.clone(),
                answer_label: target.answer_label.clone(),
                base_prob: None,
                score: None,
                model_tag_base: base.model_tag().to_string(),
                model_tag_diet: diet.model_tag().to_string(),
                error: e.to_string(),
            },
        })
        .collect();
    let mut table = ScoreTable { rows };
    table.sort();
    table
}
