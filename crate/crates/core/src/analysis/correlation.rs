use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{bootstrap, check_finite, percentile_interval, AnalysisError};
use crate::survey::AnalysisDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub r: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    #[serde(rename = "B")]
    pub bootstrap: usize,
    pub seed: u64,
}

fn pearson_unchecked(x: impl Iterator<Item = f64> + Clone, y: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = x.clone().count() as f64;
    let mx = x.clone().sum::<f64>() / n;
    let my = y.clone().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(AnalysisError::InsufficientRows { needed: 3, got: x.len() });
    }
    check_finite(x, "x")?;
    check_finite(y, "y")?;
    let r = pearson_unchecked(x.iter().copied(), y.iter().copied());
    if r.is_nan() {
        return Err(AnalysisError::ZeroVariance("correlation input"));
    }
    Ok(r)
}

/// Pearson r with a percentile bootstrap 95% interval over paired
/// resamples. Resamples with zero variance are dropped from the interval.
pub fn pearson_bootstrap(
    x: &[f64],
    y: &[f64],
    replicates: usize,
    seed: u64,
) -> Result<CorrelationResult, AnalysisError> {
    let r = pearson(x, y)?;
    if replicates == 0 {
        return Err(AnalysisError::EmptyBootstrap);
    }
    let draws = bootstrap(x.len(), replicates, seed, true, |idx| {
        pearson_unchecked(idx.iter().map(|&i| x[i]), idx.iter().map(|&i| y[i]))
    });
    let (ci_low, ci_high) = percentile_interval(&draws, 0.95);
    Ok(CorrelationResult { r, ci_low, ci_high, n: x.len(), bootstrap: replicates, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Category,
    Topic,
    Medium,
    Variant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedCorrelation {
    pub group: String,
    /// `None` when the group is too small or degenerate; see `note`.
    pub correlation: Option<CorrelationResult>,
    pub n: usize,
    pub note: String,
}

/// Score/proportion correlation within each group. Rows lacking the
/// grouping attribute fall in the group `"unknown"`.
pub fn grouped_correlations(
    data: &AnalysisDataset,
    by: GroupBy,
    replicates: usize,
    seed: u64,
) -> Vec<GroupedCorrelation> {
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in &data.rows {
        let key = match by {
            GroupBy::Category => row.category.map(|c| c.as_str().to_string()),
            GroupBy::Topic => row.topic.clone(),
            GroupBy::Medium => row.medium.clone(),
            GroupBy::Variant => Some(row.variant.to_string()),
        }
        .unwrap_or_else(|| "unknown".to_string());
        let e = groups.entry(key).or_default();
        e.0.push(row.score);
        e.1.push(row.proportion);
    }
    groups
        .into_iter()
        .map(|(group, (x, y))| {
            let n = x.len();
            match pearson_bootstrap(&x, &y, replicates, seed) {
                Ok(c) => GroupedCorrelation { group, correlation: Some(c), n, note: String::new() },
                Err(e) => GroupedCorrelation { group, correlation: None, n, note: e.to_string() },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_correlations() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&x, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &[8.0, 6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs_error() {
        assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(AnalysisError::ZeroVariance(_))));
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn bootstrap_is_reproducible_and_brackets_r() {
        let x: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v + (v * 1.7).sin() * 8.0).collect();
        let a = pearson_bootstrap(&x, &y, 500, 3).unwrap();
        let b = pearson_bootstrap(&x, &y, 500, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.ci_low <= a.r && a.r <= a.ci_high);
        let json = serde_json::to_value(&a).unwrap();
        assert_eq!(json["B"], 500);
    }
}
