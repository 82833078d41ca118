//! Kriging predictive distribution and prediction-quality metrics.

use crate::covariance::{
    covariance_from_parts, cross_covariance, local_params, spd_cholesky, CovParams,
};
use crate::error::{Error, Result};
use crate::geometry::SiteSet;
use crate::likelihood::mvn_logpdf;
use crate::special::normal_quantile;
use nalgebra::{DMatrix, DVector};

/// Gaussian predictive distribution at a set of prediction sites.
#[derive(Debug, Clone)]
pub struct PredictiveDist {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Square roots of the covariance diagonal.
    pub se: DVector<f64>,
    /// True when negative eigenvalues had to be floored to zero.
    pub floored: bool,
}

/// Conditional distribution of responses at `pred_sites` given training data.
///
/// Means at both site sets feed the link functions, the nugget enters only the
/// two diagonal blocks, and conditioning uses a single factorization of the
/// training covariance. The conditional covariance is symmetrized and, if
/// needed, eigenvalue-floored at zero.
pub fn krige(
    train_sites: &SiteSet,
    y_train: &DVector<f64>,
    pred_sites: &SiteSet,
    z_train: &DMatrix<f64>,
    z_pred: &DMatrix<f64>,
    beta: &DVector<f64>,
    eta: &CovParams,
) -> Result<PredictiveDist> {
    let n = train_sites.n();
    let q = pred_sites.n();
    if y_train.len() != n || z_train.nrows() != n || z_pred.nrows() != q {
        return Err(Error::DimensionMismatch(format!(
            "kriging with {n} training sites, y length {}, Z_train {} rows, Z_pred {} rows for {q} prediction sites",
            y_train.len(),
            z_train.nrows(),
            z_pred.nrows()
        )));
    }
    if z_train.ncols() != beta.len() || z_pred.ncols() != beta.len() {
        return Err(Error::DimensionMismatch(format!(
            "coefficient length {} vs designs with {} and {} columns",
            beta.len(),
            z_train.ncols(),
            z_pred.ncols()
        )));
    }

    let mu1 = z_train * beta;
    let mu0 = z_pred * beta;
    let local1 = local_params(&mu1, eta);
    let local0 = local_params(&mu0, eta);
    let sigma11 = covariance_from_parts(train_sites.distances(), &local1, eta.dim);
    let sigma00 = covariance_from_parts(pred_sites.distances(), &local0, eta.dim);
    let sigma01 = cross_covariance(pred_sites, &mu0, train_sites, &mu1, eta)?;

    let chol = spd_cholesky(&sigma11, None)?;
    let mean = &mu0 + &sigma01 * chol.solve(&(y_train - &mu1));
    let raw_cov = &sigma00 - &sigma01 * chol.solve(&sigma01.transpose());
    let mut cov = DMatrix::from_fn(q, q, |i, j| 0.5 * (raw_cov[(i, j)] + raw_cov[(j, i)]));

    let mut floored = false;
    if nalgebra::Cholesky::new(cov.clone()).is_none() {
        let eig = cov.symmetric_eigen();
        floored = eig.eigenvalues.iter().any(|&l| l < 0.0);
        let vals = DVector::from_fn(q, |i, _| eig.eigenvalues[i].max(0.0));
        cov = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
        cov = DMatrix::from_fn(q, q, |i, j| 0.5 * (cov[(i, j)] + cov[(j, i)]));
    }
    let se = DVector::from_fn(q, |i, _| cov[(i, i)].max(0.0).sqrt());
    Ok(PredictiveDist { mean, cov, se, floored })
}

/// Point predictions with negative values replaced by zero.
pub fn threshold_nonnegative(dist: &PredictiveDist) -> DVector<f64> {
    dist.mean.map(|v| v.max(0.0))
}

/// Joint Gaussian log-density of the test values under the predictive law.
pub fn prediction_score(dist: &PredictiveDist, y_test: &DVector<f64>) -> Result<f64> {
    mvn_logpdf(y_test, &dist.mean, &dist.cov)
}

/// Deviance of the test values: minus twice the prediction score.
pub fn deviance(dist: &PredictiveDist, y_test: &DVector<f64>) -> Result<f64> {
    Ok(-2.0 * prediction_score(dist, y_test)?)
}

/// Fraction of test values inside the central `level` prediction interval.
pub fn interval_coverage(dist: &PredictiveDist, y_test: &DVector<f64>, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParams(format!(
            "coverage level must lie in (0, 1), got {level}"
        )));
    }
    if y_test.len() != dist.mean.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} test values for {} prediction sites",
            y_test.len(),
            dist.mean.len()
        )));
    }
    let z = normal_quantile(1.0 - (1.0 - level) / 2.0)?;
    let inside = y_test
        .iter()
        .zip(dist.mean.iter().zip(dist.se.iter()))
        .filter(|(y, (m, s))| (*y - *m).abs() <= z * *s)
        .count();
    Ok(inside as f64 / y_test.len() as f64)
}

/// Empirical quantile with linear interpolation between order statistics.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// The 5%, 50%, and 95% quantiles of the standard errors.
pub fn se_quantiles(dist: &PredictiveDist) -> Result<(f64, f64, f64)> {
    se_quantiles_of(dist.se.as_slice())
}

/// The 5%, 50%, and 95% quantiles of a pooled standard-error sample.
pub fn se_quantiles_of(values: &[f64]) -> Result<(f64, f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidParams(
            "standard-error quantiles need at least one prediction site".into(),
        ));
    }
    let mut se = values.to_vec();
    se.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok((
        quantile_sorted(&se, 0.05),
        quantile_sorted(&se, 0.50),
        quantile_sorted(&se, 0.95),
    ))
}
