//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value threshold used for rank decisions on column-normalised matrices.
const RANK_TOL: f64 = 1e-9;

pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    a.clone().lu().solve(b).filter(|x| x.iter().all(|v| v.is_finite())).ok_or_else(|| Error::Singular(what.to_string()))
}

pub fn inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    a.clone().try_inverse().filter(|m| m.iter().all(|v| v.is_finite())).ok_or_else(|| Error::Singular(what.to_string()))
}

fn normalized_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    out
}

/// Numerical column rank, invariant to column scaling.
pub fn column_rank(m: &DMatrix<f64>) -> usize {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0;
    }
    let normalized = normalized_columns(m);
    let sv = normalized.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > smax * RANK_TOL).count()
}

/// Names the columns that do not add rank when columns are added left to right.
pub fn redundant_columns(m: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let mut kept: Vec<usize> = Vec::new();
    let mut redundant = Vec::new();
    for j in 0..m.ncols() {
        let mut trial = kept.clone();
        trial.push(j);
        let sub = m.select_columns(trial.iter());
        if column_rank(&sub) == trial.len() {
            kept = trial;
        } else {
            redundant.push(names.get(j).cloned().unwrap_or_else(|| format!("col{j}")));
        }
    }
    redundant
}

/// Indices of columns that add rank, left to right.
pub fn independent_columns(m: &DMatrix<f64>) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for j in 0..m.ncols() {
        let mut trial = kept.clone();
        trial.push(j);
        if column_rank(&m.select_columns(trial.iter())) == trial.len() {
            kept = trial;
        }
    }
    kept
}

#[derive(Clone, Debug)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    pub std_errors: DVector<f64>,
    pub residuals: DVector<f64>,
    /// Residual variance with the degrees-of-freedom correction.
    pub sigma2: f64,
    pub r2: f64,
    pub adj_r2: f64,
}

/// Ordinary least squares with homoskedastic standard errors.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<OlsFit> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(Error::dimension("ols response", n, y.len()));
    }
    if n <= k {
        return Err(Error::invalid(format!("{n} observations cannot identify {k} coefficients")));
    }
    if column_rank(x) < k {
        return Err(Error::Collinear { columns: redundant_columns(x, names) });
    }
    let qr = x.clone().qr();
    let qty = qr.q().transpose() * y;
    let r = qr.r();
    let coefficients = r.solve_upper_triangular(&qty).ok_or_else(|| Error::Singular("ols R factor".into()))?;
    let residuals = y - x * &coefficients;
    let rss = residuals.norm_squared();
    let df = (n - k) as f64;
    let sigma2 = rss / df;
    let r_inv = r.clone().try_inverse().ok_or_else(|| Error::Singular("ols R factor".into()))?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let std_errors = DVector::from_iterator(k, (0..k).map(|i| (sigma2 * xtx_inv[(i, i)]).sqrt()));
    let mean = y.mean();
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r2 = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };
    let adj_r2 = 1.0 - (1.0 - r2) * (n as f64 - 1.0) / df;
    Ok(OlsFit { coefficients, std_errors, residuals, sigma2, r2, adj_r2 })
}
