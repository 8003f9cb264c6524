//! Correlation, regression and screening statistics.
//!
//! Kendall's tau-b uses Knight's O(n log n) merge-sort count; linear models
//! are solved by QR (or SVD where rank deficiency is expected, as in VIF).

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} observations, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("{0} is constant; the statistic is undefined")]
    Constant(&'static str),
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("covariance matrix is singular; remove redundant or constant columns")]
    SingularCovariance,
    #[error("need at least {0} predictors")]
    TooFewPredictors(usize),
}

fn check_pair(x: &[f64], y: &[f64], min: usize) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < min {
        return Err(StatsError::TooShort { need: min, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

fn cmp(a: &f64, b: &f64) -> Ordering {
    a.partial_cmp(b).expect("finite")
}

/// Number of pairs inside runs of equal values in an already sorted sequence.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Stable merge sort of `v` that returns the number of strict inversions.
fn sort_count_inversions(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_count_inversions(&mut v[..mid], buf) + sort_count_inversions(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall's tau-b with tie adjustment.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y, 2)?;
    let n = x.len() as u64;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| cmp(&a.0, &b.0).then(cmp(&a.1, &b.1)));

    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let tied_x = tied_pairs(&xs);
    let tied_xy = tied_pairs(&pairs);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = Vec::with_capacity(ys.len());
    let discordant = sort_count_inversions(&mut ys, &mut buf);
    let tied_y = tied_pairs(&ys);

    let n0 = n * (n - 1) / 2;
    if tied_x == n0 {
        return Err(StatsError::Constant("x"));
    }
    if tied_y == n0 {
        return Err(StatsError::Constant("y"));
    }
    // concordant - discordant over pairs untied in both
    let numerator = n0 as i64 - tied_x as i64 - tied_y as i64 + tied_xy as i64 - 2 * discordant as i64;
    let denominator = ((n0 - tied_x) as f64 * (n0 - tied_y) as f64).sqrt();
    Ok(numerator as f64 / denominator)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y, 3)?;
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::Constant("x"));
    }
    if syy == 0.0 {
        return Err(StatsError::Constant("y"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their mean rank.
pub fn midranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| cmp(&v[a], &v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let r = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y, 3)?;
    pearson(&midranks(x), &midranks(y))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionFit {
    /// Intercept first, then one per predictor column.
    pub coefficients: Vec<f64>,
    /// `None` for the intercept, or when a variable has zero variance.
    pub standardized: Vec<Option<f64>>,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
    pub df_residual: usize,
}

fn design(columns: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>, StatsError> {
    for c in columns {
        if c.len() != n {
            return Err(StatsError::LengthMismatch(c.len(), n));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
    }
    Ok(DMatrix::from_fn(n, columns.len() + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            columns[j - 1][i]
        }
    }))
}

/// Two-sided p-value of a t statistic.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Ordinary least squares of `y` on an intercept plus `columns`.
pub fn ols(columns: &[Vec<f64>], y: &[f64]) -> Result<RegressionFit, StatsError> {
    let n = y.len();
    let p = columns.len() + 1;
    if n <= p {
        return Err(StatsError::TooShort { need: p + 1, got: n });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let x = design(columns, n)?;
    let yv = DVector::from_column_slice(y);

    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if scale == 0.0 || (0..p).any(|i| r[(i, i)].abs() <= 1e-10 * scale) {
        return Err(StatsError::RankDeficient);
    }
    let qty = qr.q().transpose() * &yv;
    let beta = r.solve_upper_triangular(&qty).ok_or(StatsError::RankDeficient)?;
    let resid = &yv - &x * &beta;
    let rss = resid.norm_squared();
    let df = n - p;
    let sigma2 = rss / df as f64;
    let r_inv = r.try_inverse().ok_or(StatsError::RankDeficient)?;
    let xtx_inv = &r_inv * r_inv.transpose();

    let my = mean(y);
    let tss: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let r_squared = if tss == 0.0 { 1.0 } else { (1.0 - rss / tss).clamp(0.0, 1.0) };

    let sd_y = std_dev(y);
    let mut std_errors = Vec::with_capacity(p);
    let mut t_stats = Vec::with_capacity(p);
    let mut p_values = Vec::with_capacity(p);
    let mut standardized = Vec::with_capacity(p);
    for j in 0..p {
        let se = (sigma2 * xtx_inv[(j, j)]).sqrt();
        let b = beta[j];
        let t = if se > 0.0 {
            b / se
        } else if b == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(b)
        };
        std_errors.push(se);
        t_stats.push(t);
        p_values.push(t_two_sided_p(t, df as f64));
        standardized.push(if j == 0 {
            None
        } else {
            let sd_x = std_dev(&columns[j - 1]);
            (sd_x > 0.0 && sd_y > 0.0).then(|| b * sd_x / sd_y)
        });
    }
    Ok(RegressionFit {
        coefficients: beta.iter().copied().collect(),
        standardized,
        std_errors,
        t_stats,
        p_values,
        r_squared,
        residuals: resid.iter().copied().collect(),
        df_residual: df,
    })
}

/// Pearson correlation of the residuals of `x` and `y` after regressing each
/// on the controls.
pub fn partial_pearson(x: &[f64], y: &[f64], controls: &[Vec<f64>]) -> Result<f64, StatsError> {
    check_pair(x, y, 3)?;
    if controls.is_empty() {
        return pearson(x, y);
    }
    let rx = ols(controls, x)?.residuals;
    let ry = ols(controls, y)?.residuals;
    // residuals that are zero up to rounding mean x (or y) is explained by the controls
    let tiny = |r: &[f64], v: &[f64]| {
        let scale = v.iter().map(|a| a.abs()).fold(0.0, f64::max).max(1.0);
        r.iter().all(|e| e.abs() <= 1e-10 * scale)
    };
    if tiny(&rx, x) {
        return Err(StatsError::Constant("x residual"));
    }
    if tiny(&ry, y) {
        return Err(StatsError::Constant("y residual"));
    }
    pearson(&rx, &ry)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VifEntry {
    pub tolerance: f64,
    /// Infinite under perfect collinearity.
    pub vif: f64,
    /// VIF above 10.
    pub multicollinear: bool,
    pub perfect: bool,
}

pub const VIF_LIMIT: f64 = 10.0;

/// Variance inflation factor of each predictor column against the others.
pub fn vif(columns: &[Vec<f64>]) -> Result<Vec<VifEntry>, StatsError> {
    let p = columns.len();
    if p < 2 {
        return Err(StatsError::TooFewPredictors(2));
    }
    let n = columns[0].len();
    if n <= p {
        return Err(StatsError::TooShort { need: p + 1, got: n });
    }
    let mut out = Vec::with_capacity(p);
    for j in 0..p {
        let target = &columns[j];
        let others: Vec<Vec<f64>> = columns
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != j)
            .map(|(_, c)| c.clone())
            .collect();
        let x = design(&others, n)?;
        let yv = DVector::from_column_slice(target);
        let svd = x.clone().svd(true, true);
        let eps = 1e-12 * svd.singular_values.max();
        let beta = svd.solve(&yv, eps).map_err(|_| StatsError::RankDeficient)?;
        let rss = (&yv - &x * &beta).norm_squared();
        let m = mean(target);
        let tss: f64 = target.iter().map(|v| (v - m).powi(2)).sum();
        let r2 = if tss == 0.0 { 1.0 } else { 1.0 - rss / tss };
        let entry = if r2 >= 1.0 - 1e-12 {
            VifEntry {
                tolerance: 0.0,
                vif: f64::INFINITY,
                multicollinear: true,
                perfect: true,
            }
        } else {
            let v = 1.0 / (1.0 - r2);
            VifEntry {
                tolerance: 1.0 / v,
                vif: v,
                multicollinear: v > VIF_LIMIT,
                perfect: false,
            }
        };
        out.push(entry);
    }
    Ok(out)
}

/// Sample mean and inverse covariance of a row matrix.
#[derive(Debug, Clone)]
pub struct Mahalanobis {
    mean: DVector<f64>,
    inv_cov: DMatrix<f64>,
}

impl Mahalanobis {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self, StatsError> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if n <= d || d == 0 {
            return Err(StatsError::TooShort { need: d + 1, got: n });
        }
        if rows.iter().any(|r| r.len() != d) {
            return Err(StatsError::LengthMismatch(d, rows.iter().map(Vec::len).find(|&l| l != d).unwrap_or(d)));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        let m = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        let mean = DVector::from_fn(d, |j, _| m.column(j).mean());
        let centered = DMatrix::from_fn(n, d, |i, j| m[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        let chol = cov.cholesky().ok_or(StatsError::SingularCovariance)?;
        let inv_cov = chol.inverse();
        if inv_cov.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::SingularCovariance);
        }
        Ok(Mahalanobis { mean, inv_cov })
    }

    pub fn distance_sq(&self, point: &[f64]) -> f64 {
        let delta = DVector::from_column_slice(point) - &self.mean;
        (delta.transpose() * &self.inv_cov * &delta)[(0, 0)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MahalanobisScreen {
    pub critical: f64,
    pub distances_sq: Vec<f64>,
    pub keep: Vec<bool>,
    pub dropped: usize,
}

/// Squared distance of every row from the sample mean; rows above
/// `critical` are flagged for removal.
pub fn mahalanobis_screen(rows: &[Vec<f64>], critical: f64) -> Result<MahalanobisScreen, StatsError> {
    let fit = Mahalanobis::fit(rows)?;
    let distances_sq: Vec<f64> = rows.iter().map(|r| fit.distance_sq(r)).collect();
    let keep: Vec<bool> = distances_sq.iter().map(|&d| d <= critical).collect();
    let dropped = keep.iter().filter(|k| !**k).count();
    Ok(MahalanobisScreen {
        critical,
        distances_sq,
        keep,
        dropped,
    })
}
