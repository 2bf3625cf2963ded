use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::AnalysisError;

const DEGREE: usize = 3;
const MAX_INTERIOR_KNOTS: usize = 20;
/// Search range for log10 of the relative smoothing parameter.
const LOG_LAMBDA_RANGE: (f64, f64) = (-8.0, 4.0);
const GRID_POINTS: usize = 25;
const GOLDEN_ITERS: usize = 40;

/// Cubic penalized B-spline smoother with the integrated squared second
/// derivative as roughness penalty. Inputs are rescaled to [0, 1]; outside
/// the fitted range the curve is held at its boundary value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSpline {
    lo: f64,
    hi: f64,
    knots: Vec<f64>,
    coef: Vec<f64>,
    pub lambda: f64,
    /// Effective degrees of freedom, the trace of the smoother matrix.
    pub edf: f64,
    pub gcv: f64,
}

/// All B-spline basis functions of `degree` on knot vector `t` at `u`.
fn basis(t: &[f64], degree: usize, u: f64) -> Vec<f64> {
    let m = t.len();
    let last = (0..m - 1).rev().find(|&i| t[i] < t[i + 1]).expect("knot vector spans an interval");
    let mut n: Vec<f64> = (0..m - 1)
        .map(|i| {
            let inside = t[i] <= u && u < t[i + 1];
            let at_end = i == last && u >= t[last + 1];
            if inside || at_end {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let ratio = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    for d in 1..=degree {
        n = (0..m - 1 - d)
            .map(|i| {
                ratio(u - t[i], t[i + d] - t[i]) * n[i] + ratio(t[i + d + 1] - u, t[i + d + 1] - t[i + 1]) * n[i + 1]
            })
            .collect();
    }
    n
}

/// Maps cubic coefficients to the coefficients of the second derivative,
/// a degree-1 spline on the hats `N_{i,1}`, `i = 2..p-1`. Coefficients of
/// a straight line map to zero.
fn second_difference(t: &[f64]) -> DMatrix<f64> {
    let p = t.len() - DEGREE - 1;
    let mut first = DMatrix::zeros(p - 1, p);
    for i in 1..p {
        let w = 3.0 / (t[i + 3] - t[i]);
        first[(i - 1, i)] = w;
        first[(i - 1, i - 1)] = -w;
    }
    let mut second = DMatrix::zeros(p - 2, p - 1);
    for i in 2..p {
        let w = 2.0 / (t[i + 2] - t[i]);
        second[(i - 2, i - 1)] = w;
        second[(i - 2, i - 2)] = -w;
    }
    second * first
}

/// Gram matrix of the hats `N_{i,1}`, `i = 2..p-1`.
fn hat_gram(t: &[f64]) -> DMatrix<f64> {
    let m = t.len() - DEGREE - 3;
    let mut g = DMatrix::zeros(m, m);
    for r in 0..m {
        let i = r + 2;
        g[(r, r)] = (t[i + 2] - t[i]) / 3.0;
        if r + 1 < m {
            let off = (t[i + 2] - t[i + 1]) / 6.0;
            g[(r, r + 1)] = off;
            g[(r + 1, r)] = off;
        }
    }
    g
}

/// `L` with `L'L` equal to the roughness penalty matrix.
fn penalty_root(t: &[f64]) -> DMatrix<f64> {
    let chol = hat_gram(t).cholesky().expect("interior knots are distinct");
    chol.l().transpose() * second_difference(t)
}

fn interior_knots(sorted_unique: &[f64]) -> Vec<f64> {
    let k = (sorted_unique.len() - 4).min(MAX_INTERIOR_KNOTS);
    (1..=k).map(|j| super::quantile_sorted(sorted_unique, j as f64 / (k + 1) as f64)).collect()
}

/// Penalized least squares in factored form. With `B = Q0 R0` and
/// `P = L'L`, each smoothing parameter needs only a QR of the small
/// stacked matrix `[R0; sqrt(lambda) L]`, which avoids forming the
/// ill-conditioned normal equations.
struct Problem {
    r0: DMatrix<f64>,
    qty: DVector<f64>,
    root_pen: DMatrix<f64>,
    basis_rows: DMatrix<f64>,
    y: DVector<f64>,
    /// Traces of `B'B` and `P`, which set the scale of lambda.
    btb_trace: f64,
    pen_trace: f64,
}

struct Solution {
    coef: DVector<f64>,
    edf: f64,
    gcv: f64,
}

impl Problem {
    fn new(basis_rows: DMatrix<f64>, y: DVector<f64>, root_pen: DMatrix<f64>) -> Self {
        let qr = basis_rows.clone().qr();
        let qty = qr.q().transpose() * &y;
        let r0 = qr.r();
        Problem {
            r0,
            qty,
            pen_trace: root_pen.norm_squared(),
            root_pen,
            btb_trace: basis_rows.norm_squared(),
            basis_rows,
            y,
        }
    }

    /// Coefficients and `||R0 Rs^-1||_F^2` (the smoother trace), with an
    /// optional ridge row block for rank-deficient bases.
    fn factor(&self, lambda: f64, ridge: f64) -> Option<(DVector<f64>, f64)> {
        let p = self.r0.ncols();
        let m = self.root_pen.nrows();
        let extra = if ridge > 0.0 { p } else { 0 };
        let mut stacked = DMatrix::zeros(p + m + extra, p);
        stacked.rows_mut(0, p).copy_from(&self.r0);
        stacked.rows_mut(p, m).copy_from(&(&self.root_pen * lambda.sqrt()));
        if ridge > 0.0 {
            stacked.rows_mut(p + m, p).fill_diagonal(ridge.sqrt());
        }
        let qr = stacked.qr();
        let r = qr.r();
        let max_diag = r.diagonal().amax();
        if max_diag == 0.0 || r.diagonal().iter().any(|d| d.abs() <= max_diag * 1e-13) {
            return None;
        }
        let top = qr.q().rows(0, p).into_owned();
        let coef = r.solve_upper_triangular(&(top.transpose() * &self.qty))?;
        Some((coef, top.norm_squared()))
    }

    fn solve(&self, lambda: f64) -> Result<Solution, AnalysisError> {
        let p = self.r0.ncols();
        let n = self.y.len() as f64;
        let (coef, edf) = match self.factor(lambda, 0.0) {
            Some(f) => f,
            None => {
                let jitter = 1e-10 * self.btb_trace.max(1.0) / p as f64;
                self.factor(lambda, jitter)
                    .ok_or_else(|| AnalysisError::Numerical("penalized system is singular".into()))?
            }
        };
        let resid = &self.y - &self.basis_rows * &coef;
        let rss = resid.norm_squared();
        let denom = n - edf;
        let gcv = if denom <= 0.0 { f64::INFINITY } else { n * rss / (denom * denom) };
        Ok(Solution { coef, edf, gcv })
    }
}

impl SmoothingSpline {
    /// Fits with a fixed `lambda`, or chooses it by generalized
    /// cross-validation when `None`. With fewer than four distinct inputs
    /// the fit is a straight line; with one, a constant.
    pub fn fit(x: &[f64], y: &[f64], lambda: Option<f64>) -> Result<SmoothingSpline, AnalysisError> {
        if x.len() != y.len() {
            return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
        }
        if x.is_empty() {
            return Err(AnalysisError::InsufficientRows { needed: 1, got: 0 });
        }
        super::check_finite(x, "smoother input")?;
        super::check_finite(y, "smoother response")?;
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = |v: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        let u: Vec<f64> = x.iter().map(|&v| scale(v)).collect();
        let mut uniq = u.clone();
        uniq.sort_by(f64::total_cmp);
        uniq.dedup();

        let mut knots = vec![0.0; DEGREE + 1];
        if uniq.len() >= 4 {
            knots.extend(interior_knots(&uniq));
        }
        knots.extend([1.0; DEGREE + 1]);

        if uniq.len() < 4 {
            // Linear (or constant) fit expressed through Greville abscissae.
            let n = u.len() as f64;
            let mu = u.iter().sum::<f64>() / n;
            let my = y.iter().sum::<f64>() / n;
            let suu: f64 = u.iter().map(|v| (v - mu).powi(2)).sum();
            let suy: f64 = u.iter().zip(y).map(|(a, b)| (a - mu) * (b - my)).sum();
            let slope = if suu > 0.0 { suy / suu } else { 0.0 };
            let coef = (0..=DEGREE).map(|i| my + slope * (i as f64 / DEGREE as f64 - mu)).collect();
            return Ok(SmoothingSpline {
                lo,
                hi,
                knots,
                coef,
                lambda: f64::INFINITY,
                edf: if suu > 0.0 { 2.0 } else { 1.0 },
                gcv: f64::NAN,
            });
        }

        let p = knots.len() - DEGREE - 1;
        let mut basis_rows = DMatrix::zeros(u.len(), p);
        for (i, &ui) in u.iter().enumerate() {
            for (j, b) in basis(&knots, DEGREE, ui).into_iter().enumerate() {
                basis_rows[(i, j)] = b;
            }
        }
        let yv = DVector::from_column_slice(y);
        let problem = Problem::new(basis_rows, yv, penalty_root(&knots));
        let (lambda, sol) = match lambda {
            Some(l) => (l, problem.solve(l)?),
            None => {
                let unit = problem.btb_trace / problem.pen_trace.max(f64::MIN_POSITIVE);
                let to_lambda = |t: f64| unit * 10f64.powf(t);
                let score = |t: f64| problem.solve(to_lambda(t)).map(|s| s.gcv);
                let step = (LOG_LAMBDA_RANGE.1 - LOG_LAMBDA_RANGE.0) / (GRID_POINTS - 1) as f64;
                let grid: Vec<f64> = (0..GRID_POINTS).map(|i| LOG_LAMBDA_RANGE.0 + step * i as f64).collect();
                let mut best = 0;
                let mut best_score = f64::INFINITY;
                for (i, &t) in grid.iter().enumerate() {
                    let s = score(t)?;
                    if s < best_score {
                        best_score = s;
                        best = i;
                    }
                }
                let mut a = grid[best.saturating_sub(1)];
                let mut b = grid[(best + 1).min(GRID_POINTS - 1)];
                let phi = (5f64.sqrt() - 1.0) / 2.0;
                let mut c = b - phi * (b - a);
                let mut d = a + phi * (b - a);
                let (mut fc, mut fd) = (score(c)?, score(d)?);
                for _ in 0..GOLDEN_ITERS {
                    if fc <= fd {
                        b = d;
                        d = c;
                        fd = fc;
                        c = b - phi * (b - a);
                        fc = score(c)?;
                    } else {
                        a = c;
                        c = d;
                        fc = fd;
                        d = a + phi * (b - a);
                        fd = score(d)?;
                    }
                }
                let mut t = (a + b) / 2.0;
                if best_score < score(t)? {
                    t = grid[best];
                }
                (to_lambda(t), problem.solve(to_lambda(t))?)
            }
        };
        Ok(SmoothingSpline {
            lo,
            hi,
            knots,
            coef: sol.coef.iter().copied().collect(),
            lambda,
            edf: sol.edf,
            gcv: sol.gcv,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let u = if self.hi > self.lo { ((x - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0) } else { 0.0 };
        basis(&self.knots, DEGREE, u).iter().zip(&self.coef).map(|(b, c)| b * c).sum()
    }

    /// Roughness of the fitted curve, the integral of its squared second
    /// derivative over the scaled input range.
    pub fn roughness(&self) -> f64 {
        let c = DVector::from_column_slice(&self.coef);
        (penalty_root(&self.knots) * c).norm_squared()
    }
}
