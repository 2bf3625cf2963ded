//! Survey waves, media diet subpopulations, and the join of score tables
//! with survey response proportions.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probe::{ProbeError, ScoreTable, Variant};

#[derive(Debug, Error)]
pub enum SurveyError {
    #[error("invalid survey data: {0}")]
    Invalid(String),
    #[error("{} score row(s) have no matching survey proportion: {}", .0.len(), .0.join("; "))]
    Unmatched(Vec<String>),
    #[error("{} score row(s) come from models whose window does not precede the survey: {}", .0.len(), .0.join("; "))]
    Misaligned(Vec<String>),
    #[error("{} score row(s) carry errors: {}", .0.len(), .0.join("; "))]
    ScoreErrors(Vec<String>),
    #[error("expected exactly two targets per (diet, prompt): {}", .0.join("; "))]
    TargetCount(Vec<String>),
    #[error("duplicate survey wave for diet {diet_id}, question {question_id}")]
    DuplicateWave { diet_id: String, question_id: String },
    #[error("survey CSV line {line}: {message}")]
    Row { line: u64, message: String },
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Question type along the egocentric/sociocentric and
/// retrospective/prospective axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    EgoRetro,
    EgoPro,
    SocioRetro,
    SocioPro,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::EgoRetro => "ego_retro",
            Category::EgoPro => "ego_pro",
            Category::SocioRetro => "socio_retro",
            Category::SocioPro => "socio_pro",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyQuestion {
    pub question_id: String,
    pub text: String,
    pub choices: Vec<String>,
    /// Indices into `choices` of the two opposing answers that are probed.
    pub opposing_pair: (usize, usize),
    #[serde(default)]
    pub category: Option<Category>,
    #[serde(default)]
    pub topic: Option<String>,
}

impl SurveyQuestion {
    pub fn validate(&self) -> Result<(), SurveyError> {
        let (a, b) = self.opposing_pair;
        if a == b || a >= self.choices.len() || b >= self.choices.len() {
            return Err(SurveyError::Invalid(format!(
                "question {}: opposing pair ({a}, {b}) invalid for {} choices",
                self.question_id,
                self.choices.len()
            )));
        }
        Ok(())
    }

    pub fn opposing_choices(&self) -> (&str, &str) {
        (&self.choices[self.opposing_pair.0], &self.choices[self.opposing_pair.1])
    }
}

pub fn load_questions(path: impl AsRef<Path>) -> Result<Vec<SurveyQuestion>, SurveyError> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| SurveyError::Io { path: path.display().to_string(), source: e })?;
    let questions: Vec<SurveyQuestion> =
        serde_json::from_str(&text).map_err(|e| SurveyError::Invalid(format!("{}: {e}", path.display())))?;
    for q in &questions {
        q.validate()?;
    }
    Ok(questions)
}

/// Aggregate responses of one media diet subpopulation to one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyWave {
    pub wave_id: String,
    pub field_date: NaiveDate,
    pub diet_id: String,
    pub question_id: String,
    pub proportions: BTreeMap<String, f64>,
    /// Share of the subpopulation following the topic's news "very closely".
    pub attention_very_close: f64,
    /// Share of the subpopulation in each demographic band.
    pub demographics: BTreeMap<String, f64>,
}

fn unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl SurveyWave {
    /// Proportions in [0, 1] summing to at most 1 (nonresponse allowed).
    pub fn validate(&self) -> Result<(), SurveyError> {
        let bad = |m: String| {
            SurveyError::Invalid(format!("wave {} ({}, {}): {m}", self.wave_id, self.diet_id, self.question_id))
        };
        if let Some((c, p)) = self.proportions.iter().find(|(_, p)| !unit(**p)) {
            return Err(bad(format!("proportion {p} for {c:?} outside [0, 1]")));
        }
        let total: f64 = self.proportions.values().sum();
        if total > 1.0 + 1e-9 {
            return Err(bad(format!("proportions sum to {total}")));
        }
        if !unit(self.attention_very_close) {
            return Err(bad(format!("attention {} outside [0, 1]", self.attention_very_close)));
        }
        if let Some((k, v)) = self.demographics.iter().find(|(_, v)| !unit(**v)) {
            return Err(bad(format!("demographic {k} = {v} outside [0, 1]")));
        }
        Ok(())
    }
}

/// Demographic bands used as regression covariates. Band names are the
/// column names; cut points are kept for documentation and for generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicScheme {
    pub age_cutpoints: Vec<u32>,
    pub bands: BTreeMap<String, Vec<String>>,
}

impl Default for DemographicScheme {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let mut bands = BTreeMap::new();
        bands.insert("age".to_string(), s(&["age_18_29", "age_30_49", "age_50_64", "age_65_plus"]));
        bands.insert("education".to_string(), s(&["educ_hs_or_less", "educ_some_college", "educ_college_plus"]));
        bands.insert("race".to_string(), s(&["race_white", "race_black", "race_hispanic", "race_other"]));
        bands.insert("sex".to_string(), s(&["sex_male", "sex_female"]));
        DemographicScheme { age_cutpoints: vec![30, 50, 65], bands }
    }
}

impl DemographicScheme {
    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = self.bands.values().flatten().cloned().collect();
        cols.sort();
        cols
    }
}

/// Column names of the long-format survey CSV (one row per wave × choice).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurveyColumns {
    pub wave_id: String,
    pub field_date: String,
    pub diet_id: String,
    pub question_id: String,
    pub choice: String,
    pub proportion: String,
    pub attention: String,
    /// Every column starting with this prefix is a demographic share; the
    /// prefix is stripped from the band name.
    pub demographic_prefix: String,
}

impl Default for SurveyColumns {
    fn default() -> Self {
        SurveyColumns {
            wave_id: "wave_id".into(),
            field_date: "field_date".into(),
            diet_id: "diet_id".into(),
            question_id: "question_id".into(),
            choice: "choice".into(),
            proportion: "proportion".into(),
            attention: "attention_very_close".into(),
            demographic_prefix: "demo_".into(),
        }
    }
}

pub fn read_survey_csv<R: Read>(reader: R, cols: &SurveyColumns) -> Result<Vec<SurveyWave>, SurveyError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SurveyError::Invalid(format!("survey CSV lacks column {name:?}")))
    };
    let i_wave = find(&cols.wave_id)?;
    let i_date = find(&cols.field_date)?;
    let i_diet = find(&cols.diet_id)?;
    let i_q = find(&cols.question_id)?;
    let i_choice = find(&cols.choice)?;
    let i_prop = find(&cols.proportion)?;
    let i_att = find(&cols.attention)?;
    let demo: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix(cols.demographic_prefix.as_str()).map(|b| (i, b.to_string())))
        .collect();

    let mut waves: BTreeMap<(String, String, String), SurveyWave> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let err = |message: String| SurveyError::Row { line, message };
        let num = |i: usize| -> Result<f64, SurveyError> {
            rec[i].trim().parse::<f64>().map_err(|e| err(format!("column {}: {e}", &headers[i])))
        };
        let date =
            NaiveDate::parse_from_str(rec[i_date].trim(), "%Y-%m-%d").map_err(|e| err(format!("field_date: {e}")))?;
        let key = (rec[i_wave].to_string(), rec[i_diet].to_string(), rec[i_q].to_string());
        let mut demographics = BTreeMap::new();
        for (i, band) in &demo {
            demographics.insert(band.clone(), num(*i)?);
        }
        let attention = num(i_att)?;
        let wave = waves.entry(key.clone()).or_insert_with(|| SurveyWave {
            wave_id: key.0.clone(),
            field_date: date,
            diet_id: key.1.clone(),
            question_id: key.2.clone(),
            proportions: BTreeMap::new(),
            attention_very_close: attention,
            demographics: demographics.clone(),
        });
        if wave.field_date != date || wave.attention_very_close != attention || wave.demographics != demographics {
            return Err(err("covariates differ between rows of the same wave".into()));
        }
        if wave.proportions.insert(rec[i_choice].to_string(), num(i_prop)?).is_some() {
            return Err(err(format!("duplicate choice {:?}", &rec[i_choice])));
        }
    }
    let waves: Vec<SurveyWave> = waves.into_values().collect();
    for w in &waves {
        w.validate()?;
    }
    Ok(waves)
}

pub fn load_survey_csv(path: impl AsRef<Path>, cols: &SurveyColumns) -> Result<Vec<SurveyWave>, SurveyError> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| SurveyError::Io { path: path.display().to_string(), source: e })?;
    read_survey_csv(f, cols)
}

/// Writes waves in the default long format.
pub fn write_survey_csv<W: Write>(w: W, waves: &[SurveyWave]) -> Result<(), SurveyError> {
    let cols = SurveyColumns::default();
    let bands: BTreeSet<&String> = waves.iter().flat_map(|w| w.demographics.keys()).collect();
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec![
        cols.wave_id.clone(),
        cols.field_date.clone(),
        cols.diet_id.clone(),
        cols.question_id.clone(),
        cols.choice.clone(),
        cols.proportion.clone(),
        cols.attention.clone(),
    ];
    header.extend(bands.iter().map(|b| format!("{}{b}", cols.demographic_prefix)));
    wtr.write_record(&header)?;
    for wave in waves {
        for (choice, p) in &wave.proportions {
            let mut rec = vec![
                wave.wave_id.clone(),
                wave.field_date.to_string(),
                wave.diet_id.clone(),
                wave.question_id.clone(),
                choice.clone(),
                p.to_string(),
                wave.attention_very_close.to_string(),
            ];
            rec.extend(bands.iter().map(|b| wave.demographics.get(*b).map(f64::to_string).unwrap_or_default()));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BucketKey {
    pub age_band: String,
    pub gender: String,
    pub region: String,
    pub education: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespondentBucket {
    pub bucket_key: BucketKey,
    /// Share of the bucket's respondents using each outlet.
    pub outlet_shares: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DietGroups {
    /// Diet id (primary outlets joined by `+`) to its member buckets.
    pub groups: BTreeMap<String, BTreeSet<BucketKey>>,
    /// Buckets without any primary outlet.
    pub excluded: Vec<BucketKey>,
}

pub const DEFAULT_PRIMARY_THRESHOLD: f64 = 0.5;

/// Groups demographic buckets by their set of primary outlets (outlets
/// used by at least `threshold` of the bucket). Buckets sharing the same
/// set form one diet group.
pub fn link_media_diet_buckets(buckets: &[RespondentBucket], threshold: f64) -> Result<DietGroups, SurveyError> {
    let mut out = DietGroups::default();
    let mut excluded = BTreeSet::new();
    for b in buckets {
        if let Some((o, s)) = b.outlet_shares.iter().find(|(_, s)| !unit(**s)) {
            return Err(SurveyError::Invalid(format!("bucket {:?}: share {s} for {o} outside [0, 1]", b.bucket_key)));
        }
        let primary: Vec<&str> =
            b.outlet_shares.iter().filter(|(_, &s)| s >= threshold).map(|(o, _)| o.as_str()).collect();
        if primary.is_empty() {
            excluded.insert(b.bucket_key.clone());
        } else {
            out.groups.entry(primary.join("+")).or_default().insert(b.bucket_key.clone());
        }
    }
    out.excluded = excluded.into_iter().collect();
    Ok(out)
}

/// Respondent tallies of one bucket for one question.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketTally {
    pub respondents: u64,
    pub choice_counts: BTreeMap<String, u64>,
}

/// Pools bucket tallies into per-diet response proportions.
pub fn pool_group_responses(
    groups: &DietGroups,
    tallies: &BTreeMap<BucketKey, BucketTally>,
) -> BTreeMap<String, BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (diet, members) in &groups.groups {
        let mut n = 0u64;
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for key in members {
            if let Some(t) = tallies.get(key) {
                n += t.respondents;
                for (c, k) in &t.choice_counts {
                    *counts.entry(c.clone()).or_default() += k;
                }
            }
        }
        if n > 0 {
            out.insert(diet.clone(), counts.into_iter().map(|(c, k)| (c, k as f64 / n as f64)).collect());
        }
    }
    out
}

/// Per-diet metadata used by the join: the model window and medium.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DietInfo {
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    #[serde(default)]
    pub medium: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct JoinOptions {
    pub allow_misaligned: bool,
    pub diets: BTreeMap<String, DietInfo>,
    pub questions: BTreeMap<String, SurveyQuestion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRow {
    pub diet_id: String,
    pub question_id: String,
    pub prompt_id: String,
    pub variant: Variant,
    pub target_word: String,
    pub answer_label: String,
    pub score: f64,
    pub base_prob: f64,
    pub proportion: f64,
    pub attention: f64,
    pub demographics: BTreeMap<String, f64>,
    pub date: NaiveDate,
    pub category: Option<Category>,
    pub topic: Option<String>,
    pub medium: Option<String>,
    pub model_tag_diet: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnalysisDataset {
    pub rows: Vec<AnalysisRow>,
}

impl AnalysisDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn demographic_columns(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.rows.iter().flat_map(|r| r.demographics.keys()).collect();
        set.into_iter().cloned().collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SurveyError> {
        let demo = self.demographic_columns();
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = [
            "diet_id",
            "question_id",
            "prompt_id",
            "variant",
            "target_word",
            "answer_label",
            "score",
            "base_prob",
            "proportion",
            "attention",
            "date",
            "category",
            "topic",
            "medium",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(demo.iter().map(|d| format!("demo_{d}")));
        wtr.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.diet_id.clone(),
                r.question_id.clone(),
                r.prompt_id.clone(),
                r.variant.to_string(),
                r.target_word.clone(),
                r.answer_label.clone(),
                r.score.to_string(),
                r.base_prob.to_string(),
                r.proportion.to_string(),
                r.attention.to_string(),
                r.date.to_string(),
                r.category.map(|c| c.as_str().to_string()).unwrap_or_default(),
                r.topic.clone().unwrap_or_default(),
                r.medium.clone().unwrap_or_default(),
            ];
            rec.extend(demo.iter().map(|d| r.demographics.get(d).map(f64::to_string).unwrap_or_default()));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Joins score rows with survey proportions on (diet, question, answer).
///
/// Every failure class is collected exhaustively before erroring: rows
/// with scoring errors, unmatched keys, and models whose window does not
/// precede the survey date (unless `allow_misaligned`).
pub fn join_scores_responses(
    scores: &ScoreTable,
    waves: &[SurveyWave],
    options: &JoinOptions,
) -> Result<AnalysisDataset, SurveyError> {
    scores.check_provenance()?;
    let mut index: BTreeMap<(&str, &str), &SurveyWave> = BTreeMap::new();
    for w in waves {
        if index.insert((&w.diet_id, &w.question_id), w).is_some() {
            return Err(SurveyError::DuplicateWave { diet_id: w.diet_id.clone(), question_id: w.question_id.clone() });
        }
    }
    let mut errored = Vec::new();
    let mut unmatched = Vec::new();
    let mut misaligned = Vec::new();
    let mut rows = Vec::new();
    let mut per_prompt: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for s in &scores.rows {
        let key = format!("({}, {}, {:?})", s.diet_id, s.question_id, s.answer_label);
        *per_prompt.entry((&s.diet_id, &s.prompt_id)).or_default() += 1;
        let (Some(score), Some(base_prob), true) = (s.score, s.base_prob, s.error.is_empty()) else {
            errored.push(format!("{key}: {}", s.error));
            continue;
        };
        let Some(wave) = index.get(&(s.diet_id.as_str(), s.question_id.as_str())) else {
            unmatched.push(key);
            continue;
        };
        let Some(&proportion) = wave.proportions.get(&s.answer_label) else {
            unmatched.push(key);
            continue;
        };
        let info = options.diets.get(&s.diet_id);
        if let Some(info) = info {
            if info.window_end > wave.field_date && !options.allow_misaligned {
                misaligned.push(format!("{key}: window ends {} after survey {}", info.window_end, wave.field_date));
                continue;
            }
        }
        let question = options.questions.get(&s.question_id);
        rows.push(AnalysisRow {
            diet_id: s.diet_id.clone(),
            question_id: s.question_id.clone(),
            prompt_id: s.prompt_id.clone(),
            variant: s.variant,
            target_word: s.target_word.clone(),
            answer_label: s.answer_label.clone(),
            score,
            base_prob,
            proportion,
            attention: wave.attention_very_close,
            demographics: wave.demographics.clone(),
            date: wave.field_date,
            category: question.and_then(|q| q.category),
            topic: question.and_then(|q| q.topic.clone()),
            medium: info.and_then(|i| i.medium.clone()),
            model_tag_diet: s.model_tag_diet.clone(),
        });
    }
    if !errored.is_empty() {
        return Err(SurveyError::ScoreErrors(errored));
    }
    if !unmatched.is_empty() {
        return Err(SurveyError::Unmatched(unmatched));
    }
    if !misaligned.is_empty() {
        return Err(SurveyError::Misaligned(misaligned));
    }
    let bad: Vec<String> =
        per_prompt.iter().filter(|(_, &n)| n != 2).map(|((d, p), n)| format!("({d}, {p}) has {n}")).collect();
    if !bad.is_empty() {
        return Err(SurveyError::TargetCount(bad));
    }
    Ok(AnalysisDataset { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::ScoreRow;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn bucket(age: &str, shares: &[(&str, f64)]) -> RespondentBucket {
        RespondentBucket {
            bucket_key: BucketKey {
                age_band: age.into(),
                gender: "f".into(),
                region: "west".into(),
                education: "college".into(),
            },
            outlet_shares: shares.iter().map(|(o, s)| (o.to_string(), *s)).collect(),
        }
    }

    #[test]
    fn threshold_is_inclusive() {
        let g = link_media_diet_buckets(&[bucket("18-29", &[("CNN", 0.6)]), bucket("30-49", &[("CNN", 0.5)])], 0.5)
            .unwrap();
        assert_eq!(g.groups.len(), 1);
        assert_eq!(g.groups["CNN"].len(), 2);
    }

    #[test]
    fn buckets_without_primary_source_excluded() {
        let g = link_media_diet_buckets(
            &[bucket("18-29", &[("CNN", 0.49), ("FOX", 0.2)]), bucket("30-49", &[("CNN", 0.7), ("FOX", 0.55)])],
            0.5,
        )
        .unwrap();
        assert_eq!(g.excluded.len(), 1);
        assert!(g.groups.contains_key("CNN+FOX"));
    }

    #[test]
    fn pooling_weights_by_respondents() {
        let b1 = bucket("18-29", &[("CNN", 0.9)]);
        let b2 = bucket("30-49", &[("CNN", 0.9)]);
        let g = link_media_diet_buckets(&[b1.clone(), b2.clone()], 0.5).unwrap();
        let mut tallies = BTreeMap::new();
        tallies
            .insert(b1.bucket_key, BucketTally { respondents: 10, choice_counts: [("better".to_string(), 5)].into() });
        tallies
            .insert(b2.bucket_key, BucketTally { respondents: 30, choice_counts: [("better".to_string(), 5)].into() });
        let pooled = pool_group_responses(&g, &tallies);
        assert_eq!(pooled["CNN"]["better"], 0.25);
    }

    fn score_row(diet: &str, q: &str, word: &str, label: &str) -> ScoreRow {
        ScoreRow {
            diet_id: diet.into(),
            prompt_id: format!("p-{q}"),
            question_id: q.into(),
            variant: Variant::Orig,
            target_word: word.into(),
            answer_label: label.into(),
            base_prob: Some(0.1),
            score: Some(1.5),
            model_tag_base: "base".into(),
            model_tag_diet: format!("tag-{diet}"),
            error: String::new(),
        }
    }

    fn wave(diet: &str, q: &str, when: &str) -> SurveyWave {
        SurveyWave {
            wave_id: "w1".into(),
            field_date: date(when),
            diet_id: diet.into(),
            question_id: q.into(),
            proportions: [("major".to_string(), 0.6), ("minor".to_string(), 0.3)].into(),
            attention_very_close: 0.4,
            demographics: [("sex_male".to_string(), 0.5)].into(),
        }
    }

    fn pair(diet: &str) -> Vec<ScoreRow> {
        vec![score_row(diet, "q1", "major", "major"), score_row(diet, "q1", "minor", "minor")]
    }

    #[test]
    fn join_is_lossless() {
        let scores = ScoreTable { rows: [pair("CNN"), pair("FOX")].concat() };
        let waves = vec![wave("CNN", "q1", "2020-04-01"), wave("FOX", "q1", "2020-04-01")];
        let ds = join_scores_responses(&scores, &waves, &JoinOptions::default()).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.rows[0].proportion, 0.6);
    }

    #[test]
    fn unmatched_key_is_named() {
        let scores = ScoreTable { rows: [pair("CNN"), pair("NPR")].concat() };
        let err =
            join_scores_responses(&scores, &[wave("CNN", "q1", "2020-04-01")], &JoinOptions::default()).unwrap_err();
        match err {
            SurveyError::Unmatched(keys) => {
                assert_eq!(keys.len(), 2);
                assert!(keys[0].contains("NPR"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn misaligned_window_rejected_unless_allowed() {
        let scores = ScoreTable { rows: pair("CNN") };
        let waves = vec![wave("CNN", "q1", "2020-03-15")];
        let mut opts = JoinOptions::default();
        opts.diets.insert(
            "CNN".into(),
            DietInfo { window_start: date("2020-03-01"), window_end: date("2020-03-31"), medium: None },
        );
        assert!(matches!(join_scores_responses(&scores, &waves, &opts), Err(SurveyError::Misaligned(_))));
        opts.allow_misaligned = true;
        assert_eq!(join_scores_responses(&scores, &waves, &opts).unwrap().len(), 2);
    }

    #[test]
    fn exactly_two_targets_per_prompt() {
        let scores = ScoreTable { rows: vec![score_row("CNN", "q1", "major", "major")] };
        assert!(matches!(
            join_scores_responses(&scores, &[wave("CNN", "q1", "2020-04-01")], &JoinOptions::default()),
            Err(SurveyError::TargetCount(_))
        ));
    }

    #[test]
    fn survey_csv_round_trip_and_validation() {
        let waves = vec![wave("CNN", "q1", "2020-04-01"), wave("FOX", "q1", "2020-04-02")];
        let mut buf = Vec::new();
        write_survey_csv(&mut buf, &waves).unwrap();
        let back = read_survey_csv(buf.as_slice(), &SurveyColumns::default()).unwrap();
        assert_eq!(back, waves);

        let mut w = wave("CNN", "q1", "2020-04-01");
        w.proportions.insert("other".into(), 0.2);
        assert!(w.validate().is_err());
    }

    #[test]
    fn custom_column_mapping() {
        let text = "wid,date,grp,qid,answer,share,att,d_sex_male\nw,2020-01-05,CNN,q,yes,0.4,0.3,0.5\n";
        let cols = SurveyColumns {
            wave_id: "wid".into(),
            field_date: "date".into(),
            diet_id: "grp".into(),
            question_id: "qid".into(),
            choice: "answer".into(),
            proportion: "share".into(),
            attention: "att".into(),
            demographic_prefix: "d_".into(),
        };
        let waves = read_survey_csv(text.as_bytes(), &cols).unwrap();
        assert_eq!(waves[0].proportions["yes"], 0.4);
        assert_eq!(waves[0].demographics["sex_male"], 0.5);
    }

    #[test]
    fn default_scheme_has_thirteen_bands() {
        assert_eq!(DemographicScheme::default().columns().len(), 13);
    }
}
