use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{bootstrap, check_finite, percentile_interval, AnalysisError, DEFAULT_BOOTSTRAP};
use crate::survey::{AnalysisDataset, AnalysisRow};

/// A regressor column derived from an [`AnalysisRow`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Feature {
    Score,
    BaseProb,
    Attention,
    ScoreXAttention,
    Demographic(String),
}

impl Feature {
    pub fn value(&self, row: &AnalysisRow) -> Option<f64> {
        match self {
            Feature::Score => Some(row.score),
            Feature::BaseProb => Some(row.base_prob),
            Feature::Attention => Some(row.attention),
            Feature::ScoreXAttention => Some(row.score * row.attention),
            Feature::Demographic(name) => row.demographics.get(name).copied(),
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feature::Score => f.write_str("score"),
            Feature::BaseProb => f.write_str("base_prob"),
            Feature::Attention => f.write_str("attention"),
            Feature::ScoreXAttention => f.write_str("score:attention"),
            Feature::Demographic(d) => write!(f, "demo:{d}"),
        }
    }
}

impl From<Feature> for String {
    fn from(f: Feature) -> String {
        f.to_string()
    }
}

impl TryFrom<String> for Feature {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        Ok(match s.as_str() {
            "score" => Feature::Score,
            "base_prob" => Feature::BaseProb,
            "attention" => Feature::Attention,
            "score:attention" => Feature::ScoreXAttention,
            other => match other.strip_prefix("demo:") {
                Some(d) => Feature::Demographic(d.to_string()),
                None => return Err(format!("unknown feature {other:?}")),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OlsModel {
    /// Proportion on score.
    Model1,
    /// Adds attention, its interaction with score, and demographic shares.
    Model2,
}

impl OlsModel {
    pub fn features(self, data: &AnalysisDataset) -> Vec<Feature> {
        match self {
            OlsModel::Model1 => vec![Feature::Score],
            OlsModel::Model2 => {
                let mut f = vec![Feature::Score, Feature::Attention, Feature::ScoreXAttention];
                f.extend(data.demographic_columns().into_iter().map(Feature::Demographic));
                f
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OlsModel::Model1 => "model1",
            OlsModel::Model2 => "model2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OlsOptions {
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for OlsOptions {
    fn default() -> Self {
        OlsOptions { bootstrap: DEFAULT_BOOTSTRAP, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub term: String,
    pub estimate: f64,
    pub ci95: (f64, f64),
    pub ci99: (f64, f64),
    pub ci999: (f64, f64),
    /// `*`, `**`, `***` when the 95/99/99.9% interval excludes zero.
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub model: String,
    pub features: Vec<Feature>,
    /// Intercept first, then one entry per feature.
    pub coefficients: Vec<Coefficient>,
    pub r_squared: f64,
    pub rmse: f64,
    pub rmse_ci95: (f64, f64),
    pub n: usize,
    #[serde(rename = "B")]
    pub bootstrap: usize,
    pub seed: u64,
}

impl RegressionFit {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0].estimate
    }

    pub fn coefficient(&self, feature: &Feature) -> Option<&Coefficient> {
        self.features.iter().position(|f| f == feature).map(|i| &self.coefficients[i + 1])
    }

    pub fn predict(&self, row: &AnalysisRow) -> Result<f64, AnalysisError> {
        let mut y = self.intercept();
        for (i, f) in self.features.iter().enumerate() {
            let v = f.value(row).ok_or_else(|| AnalysisError::MissingFeature(f.to_string(), 0))?;
            y += self.coefficients[i + 1].estimate * v;
        }
        Ok(y)
    }

    /// Prediction from a score alone; only valid for score-only fits.
    pub fn predict_score(&self, score: f64) -> Result<f64, AnalysisError> {
        if self.features != [Feature::Score] {
            return Err(AnalysisError::IncompatibleFit(format!("{} uses features beyond score", self.model)));
        }
        Ok(self.intercept() + self.coefficients[1].estimate * score)
    }
}

/// Least squares with an unpenalized intercept. Columns and response are
/// centered and the slope vector is the minimum-norm solution of the
/// centered system, so collinear designs still yield a unique answer.
pub(crate) fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(f64, DVector<f64>), AnalysisError> {
    let (n, p) = x.shape();
    let y_mean = y.mean();
    if p == 0 {
        return Ok((y_mean, DVector::zeros(0)));
    }
    let means: Vec<f64> = (0..p).map(|j| x.column(j).mean()).collect();
    let mut xc = x.clone();
    for (j, m) in means.iter().enumerate() {
        xc.column_mut(j).add_scalar_mut(-m);
    }
    let yc = y.add_scalar(-y_mean);
    let svd = xc.svd(true, true);
    let max_sv = svd.singular_values.max();
    let eps = max_sv * n.max(p) as f64 * f64::EPSILON;
    let beta = if max_sv == 0.0 {
        DVector::zeros(p)
    } else {
        svd.solve(&yc, eps).map_err(|e| AnalysisError::Numerical(e.to_string()))?
    };
    let intercept = y_mean - beta.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    Ok((intercept, beta))
}

fn residual_ss(x: &DMatrix<f64>, y: &DVector<f64>, intercept: f64, beta: &DVector<f64>) -> f64 {
    let fitted = x * beta;
    y.iter().zip(fitted.iter()).map(|(yi, fi)| (yi - intercept - fi).powi(2)).sum()
}

fn stars(ci95: (f64, f64), ci99: (f64, f64), ci999: (f64, f64)) -> String {
    let excludes = |(lo, hi): (f64, f64)| lo > 0.0 || hi < 0.0;
    [ci95, ci99, ci999].into_iter().take_while(|c| excludes(*c)).map(|_| '*').collect()
}

pub fn fit_ols(data: &AnalysisDataset, model: OlsModel, options: OlsOptions) -> Result<RegressionFit, AnalysisError> {
    let mut fit = fit_features(data, &model.features(data), options)?;
    fit.model = model.name().to_string();
    Ok(fit)
}

/// OLS of proportion on `features` with paired bootstrap intervals.
pub fn fit_features(
    data: &AnalysisDataset,
    features: &[Feature],
    options: OlsOptions,
) -> Result<RegressionFit, AnalysisError> {
    let n = data.len();
    let p = features.len();
    if n < p + 2 {
        return Err(AnalysisError::InsufficientRows { needed: p + 2, got: n });
    }
    if options.bootstrap == 0 {
        return Err(AnalysisError::EmptyBootstrap);
    }
    let mut x = DMatrix::zeros(n, p);
    for (i, row) in data.rows.iter().enumerate() {
        for (j, f) in features.iter().enumerate() {
            x[(i, j)] = f.value(row).ok_or_else(|| AnalysisError::MissingFeature(f.to_string(), i))?;
        }
    }
    let y = DVector::from_iterator(n, data.rows.iter().map(|r| r.proportion));
    check_finite(x.as_slice(), "design matrix")?;
    check_finite(y.as_slice(), "proportion")?;

    let (intercept, beta) = least_squares(&x, &y)?;
    let ssr = residual_ss(&x, &y, intercept, &beta);
    let y_mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    let r_squared = if sst == 0.0 { 0.0 } else { (1.0 - ssr / sst).clamp(0.0, 1.0) };
    let rmse = (ssr / n as f64).sqrt();

    let draws = bootstrap(n, options.bootstrap, options.seed, true, |idx| {
        let xb = x.select_rows(idx);
        let yb = DVector::from_iterator(n, idx.iter().map(|&i| y[i]));
        match least_squares(&xb, &yb) {
            Ok((a, b)) => {
                let rmse = (residual_ss(&xb, &yb, a, &b) / n as f64).sqrt();
                let mut v = vec![a];
                v.extend(b.iter());
                v.push(rmse);
                v
            }
            Err(_) => vec![f64::NAN; p + 2],
        }
    });
    let column = |j: usize| draws.iter().map(|d| d[j]).collect::<Vec<f64>>();
    let mut estimates = vec![intercept];
    estimates.extend(beta.iter());
    let terms = std::iter::once("intercept".to_string()).chain(features.iter().map(Feature::to_string));
    let coefficients = terms
        .zip(estimates)
        .enumerate()
        .map(|(j, (term, estimate))| {
            let d = column(j);
            let ci95 = percentile_interval(&d, 0.95);
            let ci99 = percentile_interval(&d, 0.99);
            let ci999 = percentile_interval(&d, 0.999);
            Coefficient { term, estimate, ci95, ci99, ci999, stars: stars(ci95, ci99, ci999) }
        })
        .collect();
    Ok(RegressionFit {
        model: "custom".to_string(),
        features: features.to_vec(),
        coefficients,
        r_squared,
        rmse,
        rmse_ci95: percentile_interval(&column(p + 1), 0.95),
        n,
        bootstrap: options.bootstrap,
        seed: options.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_recovered() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let y = DVector::from_column_slice(&[1.0, 3.0, 5.0, 7.0]);
        let (a, b) = least_squares(&x, &y).unwrap();
        assert!((a - 1.0).abs() < 1e-12 && (b[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_column_splits_weight() {
        let col = [0.0, 1.0, 2.0, 3.0, 4.0];
        let x = DMatrix::from_fn(5, 2, |i, _| col[i]);
        let y = DVector::from_iterator(5, col.iter().map(|v| 2.0 * v + 1.0));
        let (a, b) = least_squares(&x, &y).unwrap();
        assert!((a - 1.0).abs() < 1e-10);
        assert!((b[0] - 1.0).abs() < 1e-10 && (b[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn star_thresholds() {
        assert_eq!(stars((0.1, 0.2), (0.05, 0.3), (-0.1, 0.4)), "**");
        assert_eq!(stars((-0.1, 0.2), (0.05, 0.3), (0.1, 0.4)), "");
        assert_eq!(stars((-0.3, -0.2), (-0.3, -0.1), (-0.4, -0.01)), "***");
    }

    #[test]
    fn feature_names_round_trip() {
        for f in [Feature::Score, Feature::ScoreXAttention, Feature::Demographic("age_18_29".into())] {
            assert_eq!(Feature::try_from(f.to_string()).unwrap(), f);
        }
    }
}
