//! Multivariate normal log-density and the penalized log-likelihood.

use crate::covariance::{covariance_from_parts, local_params, spd_cholesky, CovParams};
use crate::error::{Error, Result};
use crate::geometry::{DesignMatrix, ObservationPanel, SiteSet};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

const LN_2PI: f64 = 1.837_877_066_409_345_4;

/// Regression mean with per-day coefficients treated as penalized random effects.
#[derive(Debug, Clone)]
pub struct MeanModel {
    z: DesignMatrix,
    betas: DMatrix<f64>,
    beta0: DVector<f64>,
    omega: DMatrix<f64>,
}

impl MeanModel {
    /// Validates dimensions and that the penalty covariance factorizes.
    pub fn new(
        z: DesignMatrix,
        betas: DMatrix<f64>,
        beta0: DVector<f64>,
        omega: DMatrix<f64>,
    ) -> Result<Self> {
        let j = z.n_cols();
        if betas.ncols() != j || beta0.len() != j || omega.nrows() != j || omega.ncols() != j {
            return Err(Error::DimensionMismatch(format!(
                "design has {j} columns but betas are {}x{}, beta0 length {}, omega {}x{}",
                betas.nrows(),
                betas.ncols(),
                beta0.len(),
                omega.nrows(),
                omega.ncols()
            )));
        }
        if Cholesky::new(omega.clone()).is_none() {
            return Err(Error::NotPositiveDefinite { day: None });
        }
        Ok(MeanModel { z, betas, beta0, omega })
    }

    pub fn z(&self) -> &DesignMatrix {
        &self.z
    }

    pub fn betas(&self) -> &DMatrix<f64> {
        &self.betas
    }

    pub fn beta0(&self) -> &DVector<f64> {
        &self.beta0
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn n_days(&self) -> usize {
        self.betas.nrows()
    }

    pub fn beta(&self, day: usize) -> DVector<f64> {
        self.betas.row(day).transpose()
    }

    /// Fitted mean over all sites for one day.
    pub fn day_mean(&self, day: usize) -> DVector<f64> {
        self.z.z() * self.beta(day)
    }

    /// Same model with replaced coefficient rows.
    pub fn with_betas(&self, betas: DMatrix<f64>) -> Result<Self> {
        MeanModel::new(self.z.clone(), betas, self.beta0.clone(), self.omega.clone())
    }
}

/// Full parameter state: regression mean plus covariance parameters.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub mean: MeanModel,
    pub eta: CovParams,
}

/// Log-density of a multivariate normal, via Cholesky factorization.
pub fn mvn_logpdf(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    if y.len() != mean.len() || cov.nrows() != y.len() || cov.ncols() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "logpdf with y length {}, mean length {}, cov {}x{}",
            y.len(),
            mean.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    let chol = spd_cholesky(cov, None)?;
    Ok(logpdf_with_factor(&chol, &(y - mean)))
}

/// Log-density of a centered Gaussian given a precomputed factor of its covariance.
pub fn logpdf_with_factor(chol: &Cholesky<f64, Dyn>, resid: &DVector<f64>) -> f64 {
    let k = resid.len() as f64;
    let quad = resid.dot(&chol.solve(resid));
    -0.5 * (k * LN_2PI + chol.ln_determinant() + quad)
}

/// Rows `idx` of a vector.
pub(crate) fn gather_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |r, _| v[idx[r]])
}

/// The `idx` x `idx` principal submatrix.
pub(crate) fn gather_matrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

/// Penalized log-likelihood: per-day Gaussian data terms restricted to observed
/// sites, plus a Gaussian penalty on each day's coefficients.
pub fn penalized_loglik(
    panel: &ObservationPanel,
    sites: &SiteSet,
    state: &ModelState,
) -> Result<f64> {
    let n = sites.n();
    if panel.n_sites() != n || state.mean.z().n_rows() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} sites vs panel rows {} and design rows {}",
            n,
            panel.n_sites(),
            state.mean.z().n_rows()
        )));
    }
    if state.mean.n_days() != panel.n_days() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficient rows for {} panel days",
            state.mean.n_days(),
            panel.n_days()
        )));
    }

    let omega_chol = spd_cholesky(state.mean.omega(), None)?;
    let stationary = state.eta.links.is_fully_stationary();
    let stationary_cov = if stationary {
        let local = local_params(&DVector::zeros(n), &state.eta);
        Some(covariance_from_parts(sites.distances(), &local, state.eta.dim))
    } else {
        None
    };
    let shared_chol = match (&stationary_cov, panel.is_complete()) {
        (Some(cov), true) => Some(spd_cholesky(cov, None)?),
        _ => None,
    };

    let mut total = 0.0;
    for t in 0..panel.n_days() {
        let beta_t = state.mean.beta(t);
        let mu = state.mean.z().z() * &beta_t;
        if let Some(chol) = &shared_chol {
            let resid = panel.values().column(t) - &mu;
            total += logpdf_with_factor(chol, &resid);
        } else {
            let idx = panel.observed_indices(t);
            let resid = DVector::from_fn(idx.len(), |r, _| {
                panel.values()[(idx[r], t)] - mu[idx[r]]
            });
            let cov_sub = match &stationary_cov {
                Some(cov) => gather_matrix(cov, &idx),
                None => {
                    let sub_mu = gather_vec(&mu, &idx);
                    let local = local_params(&sub_mu, &state.eta);
                    let sub_dist = gather_matrix(sites.distances(), &idx);
                    covariance_from_parts(&sub_dist, &local, state.eta.dim)
                }
            };
            let chol = spd_cholesky(&cov_sub, Some(t))?;
            total += logpdf_with_factor(&chol, &resid);
        }
        let dev = &beta_t - state.mean.beta0();
        total += logpdf_with_factor(&omega_chol, &dev);
    }
    Ok(total)
}
