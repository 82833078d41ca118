//! Estimation procedures: stationary coordinate iteration, one-step approximation, full MLE.

use crate::covariance::{
    covariance_from_parts, local_params, spd_cholesky, CovParams, LinkFamily,
};
use crate::error::{Error, Result};
use crate::geometry::{DesignMatrix, ObservationPanel, SiteSet};
use crate::likelihood::{gather_matrix, gather_vec, logpdf_with_factor, MeanModel, ModelState};
use crate::optimize::{default_steps, maximize, SimplexOptions};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use std::time::Instant;

/// Which estimation procedure produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    Stationary,
    Onestep,
    FullMle,
}

/// Settings shared by all estimation procedures.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Outer alternation limit for the stationary fit.
    pub max_outer_iters: usize,
    /// Relative log-likelihood change declaring outer convergence.
    pub rel_ll_tol: f64,
    /// Simplex search settings for every numeric maximization.
    pub optimizer: SimplexOptions,
    /// Seed recorded with the fit; estimation itself is deterministic.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_outer_iters: 50,
            rel_ll_tol: 1e-6,
            optimizer: SimplexOptions::default(),
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iters == 0 || self.optimizer.max_evals == 0 {
            return Err(Error::InvalidConfig(
                "iteration and evaluation counts must be at least 1".into(),
            ));
        }
        if !(self.rel_ll_tol > 0.0) || !(self.optimizer.init_step > 0.0) {
            return Err(Error::InvalidConfig(
                "tolerances and steps must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A fitted model with its achieved penalized log-likelihood.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: ModelState,
    pub loglik: f64,
    pub method: FitMethod,
    pub converged: bool,
    pub evals: usize,
    pub wall_time: f64,
    /// Hash of the data and design the fit was computed from.
    pub data_fingerprint: u64,
    /// Accepted log-likelihood after each outer iteration (diagnostic).
    pub outer_loglik_trace: Vec<f64>,
}

fn fnv1a_mix(hash: u64, value: u64) -> u64 {
    let mut h = hash;
    for byte in value.to_le_bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Order-sensitive hash of panel, sites, and design, for nesting checks.
pub fn data_fingerprint(panel: &ObservationPanel, sites: &SiteSet, z: &DesignMatrix) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325;
    h = fnv1a_mix(h, panel.n_sites() as u64);
    h = fnv1a_mix(h, panel.n_days() as u64);
    for t in 0..panel.n_days() {
        for i in 0..panel.n_sites() {
            h = fnv1a_mix(h, panel.observed()[(i, t)] as u64);
            if panel.observed()[(i, t)] {
                h = fnv1a_mix(h, panel.values()[(i, t)].to_bits());
            }
        }
    }
    for s in sites.sites() {
        h = fnv1a_mix(h, s.lon.to_bits());
        h = fnv1a_mix(h, s.lat.to_bits());
        h = fnv1a_mix(h, s.elev.map_or(u64::MAX, f64::to_bits));
    }
    h = fnv1a_mix(h, z.n_cols() as u64);
    for v in z.z().iter() {
        h = fnv1a_mix(h, v.to_bits());
    }
    h
}

/// Penalized generalized least squares for one day's coefficients.
///
/// Solves (Z' Sigma^-1 Z + Omega^-1) beta = Z' Sigma^-1 y + Omega^-1 beta0
/// through whitened least squares on the stacked system, never by explicit
/// inversion.
pub fn fit_beta_gls(
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    beta0: &DVector<f64>,
    omega: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let j = z.ncols();
    if y.len() != z.nrows() || beta0.len() != j || omega.nrows() != j || omega.ncols() != j {
        return Err(Error::DimensionMismatch(format!(
            "gls with y length {}, Z {}x{}, beta0 length {}, Omega {}x{}",
            y.len(),
            z.nrows(),
            z.ncols(),
            beta0.len(),
            omega.nrows(),
            omega.ncols()
        )));
    }
    let sigma_chol = spd_cholesky(sigma, None)?;
    let omega_chol =
        Cholesky::new(omega.clone()).ok_or(Error::NotPositiveDefinite { day: None })?;
    let w = whitener(&omega_chol)?;
    gls_core(y, z, &sigma_chol, beta0, &w)
}

/// Inverse of the lower Cholesky factor, so W' W equals the matrix inverse.
fn whitener(chol: &Cholesky<f64, Dyn>) -> Result<DMatrix<f64>> {
    let j = chol.l_dirty().nrows();
    chol.l()
        .solve_lower_triangular(&DMatrix::identity(j, j))
        .ok_or(Error::SingularSystem)
}

fn gls_core(
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    sigma_chol: &Cholesky<f64, Dyn>,
    beta0: &DVector<f64>,
    w_omega: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let l = sigma_chol.l();
    let a = l.solve_lower_triangular(z).ok_or(Error::SingularSystem)?;
    let b = l.solve_lower_triangular(y).ok_or(Error::SingularSystem)?;
    let (n, j) = (a.nrows(), a.ncols());
    let mut aug = DMatrix::zeros(n + j, j);
    aug.view_mut((0, 0), (n, j)).copy_from(&a);
    aug.view_mut((n, 0), (j, j)).copy_from(w_omega);
    let mut rhs = DVector::zeros(n + j);
    rhs.rows_mut(0, n).copy_from(&b);
    rhs.rows_mut(n, j).copy_from(&(w_omega * beta0));
    let svd = aug.svd(true, true);
    let smax = svd.singular_values.max();
    svd.solve(&rhs, smax * 1e-14)
        .map_err(|_| Error::SingularSystem)
        .map(|m| DVector::from_column_slice(m.as_slice()))
}

/// Shared per-fit precomputation: observed subsets, penalty factor, fingerprint.
pub(crate) struct Problem<'a> {
    panel: &'a ObservationPanel,
    sites: &'a SiteSet,
    z: &'a DesignMatrix,
    beta0: DVector<f64>,
    omega: DMatrix<f64>,
    omega_chol: Cholesky<f64, Dyn>,
    w_omega: DMatrix<f64>,
    complete: bool,
    day_idx: Vec<Vec<usize>>,
    day_dist: Vec<DMatrix<f64>>,
    day_y: Vec<DVector<f64>>,
    day_z: Vec<DMatrix<f64>>,
    pub fingerprint: u64,
}

impl<'a> Problem<'a> {
    pub fn new(
        panel: &'a ObservationPanel,
        sites: &'a SiteSet,
        z: &'a DesignMatrix,
        beta0: &DVector<f64>,
        omega: &DMatrix<f64>,
    ) -> Result<Self> {
        let n = sites.n();
        if panel.n_sites() != n || z.n_rows() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} sites vs panel rows {} and design rows {}",
                panel.n_sites(),
                z.n_rows()
            )));
        }
        let j = z.n_cols();
        if beta0.len() != j || omega.nrows() != j || omega.ncols() != j {
            return Err(Error::DimensionMismatch(format!(
                "design has {j} columns but beta0 length {} and omega {}x{}",
                beta0.len(),
                omega.nrows(),
                omega.ncols()
            )));
        }
        let omega_chol = spd_cholesky(omega, None)?;
        let w_omega = whitener(&omega_chol)?;
        let complete = panel.is_complete();
        let m = panel.n_days();
        let mut day_idx = Vec::with_capacity(m);
        let mut day_dist = Vec::with_capacity(m);
        let mut day_y = Vec::with_capacity(m);
        let mut day_z = Vec::with_capacity(m);
        for t in 0..m {
            let idx = panel.observed_indices(t);
            if idx.len() < j {
                return Err(Error::DayTooSmall { day: t, observed: idx.len(), need: j });
            }
            day_dist.push(gather_matrix(sites.distances(), &idx));
            day_y.push(DVector::from_fn(idx.len(), |r, _| panel.values()[(idx[r], t)]));
            day_z.push(DMatrix::from_fn(idx.len(), j, |r, c| z.z()[(idx[r], c)]));
            day_idx.push(idx);
        }
        let fingerprint = data_fingerprint(panel, sites, z);
        Ok(Problem {
            panel,
            sites,
            z,
            beta0: beta0.clone(),
            omega: omega.clone(),
            omega_chol,
            w_omega,
            complete,
            day_idx,
            day_dist,
            day_y,
            day_z,
            fingerprint,
        })
    }

    fn n_days(&self) -> usize {
        self.panel.n_days()
    }

    /// Penalized log-likelihood at the given covariance parameters and coefficients.
    ///
    /// Mirrors `likelihood::penalized_loglik` exactly, reusing precomputed subsets.
    pub fn loglik(&self, eta: &CovParams, betas: &DMatrix<f64>) -> Result<f64> {
        let n = self.sites.n();
        let stationary = eta.links.is_fully_stationary();
        let stationary_cov = if stationary {
            let local = local_params(&DVector::zeros(n), eta);
            Some(covariance_from_parts(self.sites.distances(), &local, eta.dim))
        } else {
            None
        };
        let shared_chol = match (&stationary_cov, self.complete) {
            (Some(cov), true) => Some(spd_cholesky(cov, None)?),
            _ => None,
        };

        let mut total = 0.0;
        for t in 0..self.n_days() {
            let beta_t = betas.row(t).transpose();
            let mu = self.z.z() * &beta_t;
            if let Some(chol) = &shared_chol {
                let resid = &self.day_y[t] - &mu;
                total += logpdf_with_factor(chol, &resid);
            } else {
                let idx = &self.day_idx[t];
                let resid =
                    DVector::from_fn(idx.len(), |r, _| self.day_y[t][r] - mu[idx[r]]);
                let cov_sub = match &stationary_cov {
                    Some(cov) => gather_matrix(cov, idx),
                    None => {
                        let sub_mu = gather_vec(&mu, idx);
                        let local = local_params(&sub_mu, eta);
                        covariance_from_parts(&self.day_dist[t], &local, eta.dim)
                    }
                };
                let chol = spd_cholesky(&cov_sub, Some(t))?;
                total += logpdf_with_factor(&chol, &resid);
            }
            let dev = &beta_t - &self.beta0;
            total += logpdf_with_factor(&self.omega_chol, &dev);
        }
        Ok(total)
    }

    /// Per-day GLS coefficient update given covariance parameters.
    ///
    /// Local means entering a non-stationary covariance come from `betas`.
    pub fn gls_all_days(&self, eta: &CovParams, betas: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.sites.n();
        let j = self.z.n_cols();
        let stationary = eta.links.is_fully_stationary();
        let shared_chol = if stationary && self.complete {
            let local = local_params(&DVector::zeros(n), eta);
            let cov = covariance_from_parts(self.sites.distances(), &local, eta.dim);
            Some(spd_cholesky(&cov, None)?)
        } else {
            None
        };
        let stationary_cov = if stationary && !self.complete {
            let local = local_params(&DVector::zeros(n), eta);
            Some(covariance_from_parts(self.sites.distances(), &local, eta.dim))
        } else {
            None
        };

        let mut out = DMatrix::zeros(self.n_days(), j);
        for t in 0..self.n_days() {
            let beta_hat = if let Some(chol) = &shared_chol {
                gls_core(&self.day_y[t], &self.day_z[t], chol, &self.beta0, &self.w_omega)?
            } else {
                let idx = &self.day_idx[t];
                let cov_sub = match &stationary_cov {
                    Some(cov) => gather_matrix(cov, idx),
                    None => {
                        let mu = self.z.z() * betas.row(t).transpose();
                        let sub_mu = gather_vec(&mu, idx);
                        let local = local_params(&sub_mu, eta);
                        covariance_from_parts(&self.day_dist[t], &local, eta.dim)
                    }
                };
                let chol = spd_cholesky(&cov_sub, Some(t))?;
                gls_core(&self.day_y[t], &self.day_z[t], &chol, &self.beta0, &self.w_omega)?
            };
            out.row_mut(t).copy_from(&beta_hat.transpose());
        }
        Ok(out)
    }

    fn result(
        &self,
        eta: CovParams,
        betas: DMatrix<f64>,
        loglik: f64,
        method: FitMethod,
        converged: bool,
        evals: usize,
        started: Instant,
        trace: Vec<f64>,
    ) -> Result<FitResult> {
        let mean = MeanModel::new(self.z.clone(), betas, self.beta0.clone(), self.omega.clone())?;
        Ok(FitResult {
            state: ModelState { mean, eta },
            loglik,
            method,
            converged,
            evals,
            wall_time: started.elapsed().as_secs_f64(),
            data_fingerprint: self.fingerprint,
            outer_loglik_trace: trace,
        })
    }
}

/// Data-driven starting intercepts: residual variance split between nugget and
/// sill, and a small grid over range scales tied to the domain diameter.
fn stationary_init(prob: &Problem, evals: &mut usize) -> Result<(CovParams, DMatrix<f64>)> {
    let j = prob.z.n_cols();
    let identity_eta = CovParams::stationary(0.0, -20.0, 0.0);
    let betas0 = DMatrix::zeros(prob.n_days(), j);
    let betas = prob.gls_all_days(&identity_eta, &betas0)?;

    let mut ss = 0.0;
    let mut count = 0usize;
    for t in 0..prob.n_days() {
        let mu = prob.z.z() * betas.row(t).transpose();
        for (r, &i) in prob.day_idx[t].iter().enumerate() {
            let e = prob.day_y[t][r] - mu[i];
            ss += e * e;
            count += 1;
        }
    }
    let var = (ss / count.max(1) as f64).max(1e-8);
    let a1 = (var / 2.0).ln();
    let a2 = 0.5 * (var / 2.0).ln();

    let dmax = prob.sites.distances().max().max(1e-6);
    let mut best: Option<(f64, f64)> = None;
    for frac in [0.05, 0.15, 0.4] {
        let a3 = 2.0 * (frac * dmax).ln();
        let eta = CovParams::stationary(a1, a2, a3);
        *evals += 1;
        let ll = match prob.loglik(&eta, &betas) {
            Ok(v) => v,
            Err(_) => f64::NEG_INFINITY,
        };
        if best.map_or(true, |(_, b)| ll > b) {
            best = Some((a3, ll));
        }
    }
    let (a3, ll) = best.expect("candidate grid is nonempty");
    if !ll.is_finite() {
        return Err(Error::NotPositiveDefinite { day: None });
    }
    Ok((CovParams::stationary(a1, a2, a3), betas))
}

/// Stationary fit: alternates simplex maximization over the three intercepts
/// with exact per-day GLS coefficient updates until the log-likelihood settles.
pub fn fit_stationary(
    panel: &ObservationPanel,
    sites: &SiteSet,
    z: &DesignMatrix,
    beta0: &DVector<f64>,
    omega: &DMatrix<f64>,
    cfg: &FitConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    let started = Instant::now();
    let prob = Problem::new(panel, sites, z, beta0, omega)?;
    let mut evals = 0usize;
    let (mut eta, mut betas) = stationary_init(&prob, &mut evals)?;
    let mut ll = prob.loglik(&eta, &betas)?;
    evals += 1;
    let mut trace = vec![ll];
    let mut converged = false;

    for outer in 0..cfg.max_outer_iters {
        let x0 = [eta.a1, eta.a2, eta.a3];
        let steps = default_steps(&x0, cfg.optimizer.init_step);
        let out = maximize(
            |x| {
                prob.loglik(&CovParams::stationary(x[0], x[1], x[2]), &betas)
                    .unwrap_or(f64::NEG_INFINITY)
            },
            &x0,
            &steps,
            &cfg.optimizer,
        );
        evals += out.evals;
        let eta_new = CovParams::stationary(out.x[0], out.x[1], out.x[2]);
        let ll_eta = out.value;

        let betas_new = prob.gls_all_days(&eta_new, &betas)?;
        let ll_new = prob.loglik(&eta_new, &betas_new)?;
        evals += 1;
        let (ll_new, betas_accept) = if ll_new >= ll_eta - 1e-9 {
            (ll_new.max(ll_eta), betas_new)
        } else {
            (ll_eta, betas.clone())
        };

        if outer == 0 && !out.converged && ll_new <= ll {
            return Err(Error::NoImprovement);
        }
        eta = eta_new;
        betas = betas_accept;
        let rel = (ll_new - ll).abs() / ll.abs().max(1.0);
        ll = ll_new;
        trace.push(ll);
        if rel < cfg.rel_ll_tol {
            converged = true;
            break;
        }
    }

    prob.result(eta, betas, ll, FitMethod::Stationary, converged, evals, started, trace)
}

/// One-step fit: coefficients frozen from the stationary fit, covariance
/// parameters maximized once over the requested link family.
pub fn fit_onestep(
    panel: &ObservationPanel,
    sites: &SiteSet,
    z: &DesignMatrix,
    stationary: &FitResult,
    links: LinkFamily,
    cfg: &FitConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if stationary.method != FitMethod::Stationary {
        return Err(Error::InvalidParams(format!(
            "one-step fit starts from a stationary fit, got {:?}",
            stationary.method
        )));
    }
    let started = Instant::now();
    let prob = Problem::new(
        panel,
        sites,
        z,
        stationary.state.mean.beta0(),
        stationary.state.mean.omega(),
    )?;
    if prob.fingerprint != stationary.data_fingerprint {
        return Err(Error::NotNested(
            "stationary fit comes from different data or design".into(),
        ));
    }
    let betas = stationary.state.mean.betas().clone();
    let eta0 = CovParams::new(stationary.state.eta.a(), [0.0; 3], links)?;
    let x0 = eta0.to_free();
    let steps = default_steps(&x0, cfg.optimizer.init_step);
    let out = maximize(
        |x| match eta0.with_free(x) {
            Ok(eta) => prob.loglik(&eta, &betas).unwrap_or(f64::NEG_INFINITY),
            Err(_) => f64::NEG_INFINITY,
        },
        &x0,
        &steps,
        &cfg.optimizer,
    );
    let eta = eta0.with_free(&out.x)?;
    let trace = vec![stationary.loglik, out.value];
    prob.result(
        eta,
        betas,
        out.value,
        FitMethod::Onestep,
        out.converged,
        out.evals,
        started,
        trace,
    )
}

/// Full MLE: one joint simplex search over covariance parameters and every
/// day's coefficients, warm-started at the one-step solution.
pub fn fit_full_mle(
    panel: &ObservationPanel,
    sites: &SiteSet,
    z: &DesignMatrix,
    onestep: &FitResult,
    cfg: &FitConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if onestep.method != FitMethod::Onestep {
        return Err(Error::InvalidParams(format!(
            "full MLE starts from a one-step fit, got {:?}",
            onestep.method
        )));
    }
    let started = Instant::now();
    let prob = Problem::new(
        panel,
        sites,
        z,
        onestep.state.mean.beta0(),
        onestep.state.mean.omega(),
    )?;
    if prob.fingerprint != onestep.data_fingerprint {
        return Err(Error::NotNested(
            "one-step fit comes from different data or design".into(),
        ));
    }
    let eta0 = onestep.state.eta;
    let betas0 = onestep.state.mean.betas().clone();
    let (m, j) = betas0.shape();
    let k = eta0.free_len();

    let mut x0 = eta0.to_free();
    for t in 0..m {
        for c in 0..j {
            x0.push(betas0[(t, c)]);
        }
    }
    let mut steps = default_steps(&x0, cfg.optimizer.init_step);
    for s in steps.iter_mut().skip(k) {
        *s *= 0.4;
    }

    let unpack = |x: &[f64]| -> Result<(CovParams, DMatrix<f64>)> {
        let eta = eta0.with_free(&x[..k])?;
        let betas = DMatrix::from_fn(m, j, |t, c| x[k + t * j + c]);
        Ok((eta, betas))
    };
    let out = maximize(
        |x| match unpack(x) {
            Ok((eta, betas)) => prob.loglik(&eta, &betas).unwrap_or(f64::NEG_INFINITY),
            Err(_) => f64::NEG_INFINITY,
        },
        &x0,
        &steps,
        &cfg.optimizer,
    );
    let (eta, betas) = unpack(&out.x)?;
    let trace = vec![onestep.loglik, out.value];
    prob.result(
        eta,
        betas,
        out.value,
        FitMethod::FullMle,
        out.converged,
        out.evals,
        started,
        trace,
    )
}
