use serde::Serialize;

use super::spline::SmoothingSpline;
use super::{bootstrap, percentile_interval, AnalysisError, DEFAULT_BOOTSTRAP};
use crate::survey::AnalysisDataset;

pub const MIN_ROWS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GamOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for GamOptions {
    fn default() -> Self {
        GamOptions { tolerance: 1e-6, max_iterations: 50, bootstrap: DEFAULT_BOOTSTRAP, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothTerm {
    pub name: String,
    #[serde(skip)]
    pub spline: SmoothingSpline,
    /// Subtracted from the spline so the term averages zero over the data.
    pub offset: f64,
    pub edf: f64,
}

impl SmoothTerm {
    pub fn eval(&self, x: f64) -> f64 {
        self.spline.eval(x) - self.offset
    }
}

/// Additive model `proportion ~ a + f(base_prob) + g(score)` fitted by
/// backfitting, each smooth chosen by GCV on every pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GamFit {
    pub intercept: f64,
    pub terms: Vec<SmoothTerm>,
    pub rmse: f64,
    /// Percentile interval of RMSE over resampled residuals of this fit.
    pub rmse_ci95: (f64, f64),
    pub iterations: usize,
    pub converged: bool,
    pub n: usize,
    #[serde(rename = "B")]
    pub bootstrap: usize,
    pub seed: u64,
}

impl GamFit {
    pub fn predict(&self, base_prob: f64, score: f64) -> f64 {
        self.intercept + self.terms[0].eval(base_prob) + self.terms[1].eval(score)
    }
}

fn centered_fit(x: &[f64], r: &[f64]) -> Result<(SmoothingSpline, f64, Vec<f64>), AnalysisError> {
    let s = SmoothingSpline::fit(x, r, None)?;
    let raw: Vec<f64> = x.iter().map(|&v| s.eval(v)).collect();
    let offset = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok((s, offset, raw.into_iter().map(|v| v - offset).collect()))
}

pub fn fit_gam(data: &AnalysisDataset, options: GamOptions) -> Result<GamFit, AnalysisError> {
    let n = data.len();
    if n < MIN_ROWS {
        return Err(AnalysisError::InsufficientRows { needed: MIN_ROWS, got: n });
    }
    if options.bootstrap == 0 {
        return Err(AnalysisError::EmptyBootstrap);
    }
    let xs: [Vec<f64>; 2] =
        [data.rows.iter().map(|r| r.base_prob).collect(), data.rows.iter().map(|r| r.score).collect()];
    let y: Vec<f64> = data.rows.iter().map(|r| r.proportion).collect();
    super::check_finite(&y, "proportion")?;
    let alpha = y.iter().sum::<f64>() / n as f64;
    let mut f = [vec![0.0; n], vec![0.0; n]];
    let mut splines: [Option<(SmoothingSpline, f64)>; 2] = [None, None];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iterations {
        iterations += 1;
        let mut change: f64 = 0.0;
        for k in 0..2 {
            let other = &f[1 - k];
            let partial: Vec<f64> = (0..n).map(|i| y[i] - alpha - other[i]).collect();
            let (s, offset, fitted) = centered_fit(&xs[k], &partial)?;
            change = f[k].iter().zip(&fitted).map(|(a, b)| (a - b).abs()).fold(change, f64::max);
            f[k] = fitted;
            splines[k] = Some((s, offset));
        }
        if change < options.tolerance {
            converged = true;
            break;
        }
    }
    let residuals: Vec<f64> = (0..n).map(|i| y[i] - alpha - f[0][i] - f[1][i]).collect();
    let rmse_of = |idx: &[usize]| (idx.iter().map(|&i| residuals[i].powi(2)).sum::<f64>() / idx.len() as f64).sqrt();
    let all: Vec<usize> = (0..n).collect();
    let rmse = rmse_of(&all);
    let draws = bootstrap(n, options.bootstrap, options.seed, true, rmse_of);
    let terms = ["base_prob", "score"]
        .into_iter()
        .zip(splines)
        .map(|(name, s)| {
            let (spline, offset) = s.expect("at least one backfitting pass");
            SmoothTerm { name: name.to_string(), edf: spline.edf, spline, offset }
        })
        .collect();
    Ok(GamFit {
        intercept: alpha,
        terms,
        rmse,
        rmse_ci95: percentile_interval(&draws, 0.95),
        iterations,
        converged,
        n,
        bootstrap: options.bootstrap,
        seed: options.seed,
    })
}
