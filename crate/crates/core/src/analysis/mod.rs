//! Correlation, regression, smoothing, and rolling prediction over an
//! [`AnalysisDataset`](crate::survey::AnalysisDataset).

mod correlation;
mod gam;
mod ols;
mod report;
mod rolling;
mod spline;

pub use correlation::{
    grouped_correlations, pearson, pearson_bootstrap, CorrelationResult, GroupBy, GroupedCorrelation,
};
pub use gam::{fit_gam, GamFit, GamOptions, SmoothTerm};
pub use ols::{fit_features, fit_ols, Coefficient, Feature, OlsModel, OlsOptions, RegressionFit};
pub use report::{write_correlations_csv, write_table1};
pub use rolling::{rolling_predict, write_rolling_csv, RollingRow, RollingWindow};
pub use spline::SmoothingSpline;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::backend::GatewayError;
use crate::probe::ProbeError;

pub const DEFAULT_BOOTSTRAP: usize = 2000;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least {needed} rows, got {got}")]
    InsufficientRows { needed: usize, got: usize },
    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("bootstrap size must be positive")]
    EmptyBootstrap,
    #[error("feature {0} is missing from row {1}")]
    MissingFeature(String, usize),
    #[error("windows must be ordered and non-overlapping: {0}")]
    Windows(String),
    #[error("fit is incompatible with rolling prediction: {0}")]
    IncompatibleFit(String),
    #[error("linear solve failed: {0}")]
    Numerical(String),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// RNG for bootstrap replicate `index`. Each replicate draws from its own
/// ChaCha stream under the master seed, so results do not depend on how
/// replicates are scheduled across threads.
pub fn replicate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn resample_indices<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Evaluates `stat` on `replicates` resamples of `0..n`, in replicate order.
pub fn bootstrap<T, F>(n: usize, replicates: usize, seed: u64, parallel: bool, stat: F) -> Vec<T>
where
    T: Send,
    F: Fn(&[usize]) -> T + Sync,
{
    let run = |b: usize| stat(&resample_indices(&mut replicate_rng(seed, b), n));
    if parallel {
        (0..replicates).into_par_iter().map(run).collect()
    } else {
        (0..replicates).map(run).collect()
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Two-sided percentile interval at `level`, ignoring non-finite draws.
/// Returns NaNs when no finite draw exists.
pub fn percentile_interval(draws: &[f64], level: f64) -> (f64, f64) {
    let mut v: Vec<f64> = draws.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    v.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    (quantile_sorted(&v, a), quantile_sorted(&v, 1.0 - a))
}

pub(crate) fn check_finite(xs: &[f64], what: &'static str) -> Result<(), AnalysisError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(AnalysisError::NonFinite(what))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_serial_bootstrap_agree() {
        let xs: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let stat = |idx: &[usize]| idx.iter().map(|&i| xs[i]).sum::<f64>();
        let a = bootstrap(xs.len(), 200, 7, true, stat);
        let b = bootstrap(xs.len(), 200, 7, false, stat);
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        let c = bootstrap(xs.len(), 200, 8, false, stat);
        assert_ne!(b, c);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.125), 1.5);
        assert_eq!(percentile_interval(&[5.0, f64::NAN, 1.0], 1.0), (1.0, 5.0));
    }
}
