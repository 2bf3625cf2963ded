use std::io::Write;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{AnalysisError, RegressionFit};
use crate::backend::MaskedScorer;
use crate::probe::{media_diet_score, PromptSpec};
use crate::survey::SurveyWave;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollingWindow {
    pub window_id: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingRow {
    pub window_id: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub prompt_id: String,
    pub target_word: String,
    pub answer_label: String,
    pub score: Option<f64>,
    /// Raw linear prediction; may fall outside [0, 1].
    pub predicted: Option<f64>,
    /// Prediction clipped to [0, 1] for display.
    pub predicted_display: Option<f64>,
    /// Survey proportion fielded inside the window, when one exists.
    pub observed: Option<f64>,
    /// Empty unless the window could not be scored.
    pub gap: String,
}

/// Predicts survey proportions for each window from a score-only fit.
/// Windows without a model, or whose scoring fails, produce gap rows
/// rather than aborting the series.
pub fn rolling_predict(
    windows: &[(RollingWindow, Option<Arc<dyn MaskedScorer>>)],
    base: &dyn MaskedScorer,
    prompts: &[PromptSpec],
    fit: &RegressionFit,
    observed: &[SurveyWave],
    diet_id: Option<&str>,
) -> Result<Vec<RollingRow>, AnalysisError> {
    fit.predict_score(0.0)?;
    for (w, _) in windows {
        if w.start > w.end {
            return Err(AnalysisError::Windows(format!("{} starts after it ends", w.window_id)));
        }
    }
    for pair in windows.windows(2) {
        let (a, b) = (&pair[0].0, &pair[1].0);
        if a.end >= b.start {
            return Err(AnalysisError::Windows(format!("{} overlaps or precedes {}", b.window_id, a.window_id)));
        }
    }
    let mut rows = Vec::new();
    for (window, model) in windows {
        for prompt in prompts {
            for target in &prompt.targets {
                let observed = observed
                    .iter()
                    .filter(|w| {
                        w.question_id == prompt.question_id
                            && w.field_date >= window.start
                            && w.field_date <= window.end
                            && diet_id.is_none_or(|d| d == w.diet_id)
                    })
                    .min_by_key(|w| w.field_date)
                    .and_then(|w| w.proportions.get(&target.answer_label).copied());
                let mut row = RollingRow {
                    window_id: window.window_id.clone(),
                    start: window.start,
                    end: window.end,
                    prompt_id: prompt.prompt_id.clone(),
                    target_word: target.word.clone(),
                    answer_label: target.answer_label.clone(),
                    score: None,
                    predicted: None,
                    predicted_display: None,
                    observed,
                    gap: String::new(),
                };
                match model {
                    None => row.gap = "no model for window".to_string(),
                    Some(m) => match media_diet_score(&window.window_id, m.as_ref(), base, prompt, target) {
                        Ok(rec) => {
                            let p = fit.predict_score(rec.score)?;
                            row.score = Some(rec.score);
                            row.predicted = Some(p);
                            row.predicted_display = Some(p.clamp(0.0, 1.0));
                        }
                        Err(e) => row.gap = e.to_string(),
                    },
                }
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

pub fn write_rolling_csv<W: Write>(w: W, rows: &[RollingRow]) -> Result<(), AnalysisError> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}
