//! Mean-dependent link functions and nonstationary covariance construction.

use crate::error::{Error, Result};
use crate::geometry::SiteSet;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

const CLAMP_LO: f64 = 1e-300;
const CLAMP_HI: f64 = 1e300;

/// How one covariance component responds to the local mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkKind {
    /// exp(a), independent of the mean.
    Stationary,
    /// exp(a + b mu).
    Mdns,
    /// exp(a + b log(1 + max(mu, 0))).
    Lmdns,
}

/// Link choices for the nugget, sill, and range components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LinkFamily {
    pub nugget: LinkKind,
    pub sill: LinkKind,
    pub range: LinkKind,
}

impl LinkFamily {
    pub const STATIONARY: LinkFamily = LinkFamily::all(LinkKind::Stationary);
    pub const MDNS: LinkFamily = LinkFamily::all(LinkKind::Mdns);
    pub const LMDNS: LinkFamily = LinkFamily::all(LinkKind::Lmdns);

    pub const fn all(kind: LinkKind) -> Self {
        LinkFamily { nugget: kind, sill: kind, range: kind }
    }

    pub fn components(&self) -> [LinkKind; 3] {
        [self.nugget, self.sill, self.range]
    }

    pub fn is_fully_stationary(&self) -> bool {
        self.components().iter().all(|&k| k == LinkKind::Stationary)
    }
}

/// Covariance parameters eta = (a1, b1, a2, b2, a3, b3) with their link choices.
///
/// Components: (a1, b1) drive the nugget variance, (a2, b2) the partial-sill
/// standard deviation, (a3, b3) the squared range scale.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CovParams {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
    pub a3: f64,
    pub b3: f64,
    pub links: LinkFamily,
    pub dim: usize,
}

impl CovParams {
    /// Validates finiteness and forces b = 0 wherever the link is stationary.
    pub fn new(a: [f64; 3], b: [f64; 3], links: LinkFamily) -> Result<Self> {
        for v in a.iter().chain(b.iter()) {
            if !v.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "covariance parameters must be finite, got a = {a:?}, b = {b:?}"
                )));
            }
        }
        for (component, (kind, bv)) in links.components().iter().zip(b).enumerate() {
            if *kind == LinkKind::Stationary && bv != 0.0 {
                return Err(Error::InvalidParams(format!(
                    "component {component} has a stationary link but b = {bv}"
                )));
            }
        }
        Ok(CovParams {
            a1: a[0],
            b1: b[0],
            a2: a[1],
            b2: b[1],
            a3: a[2],
            b3: b[2],
            links,
            dim: 2,
        })
    }

    /// Fully stationary parameters with the given log-scale intercepts.
    pub fn stationary(a1: f64, a2: f64, a3: f64) -> Self {
        CovParams::new([a1, a2, a3], [0.0; 3], LinkFamily::STATIONARY)
            .expect("finite intercepts with zero slopes are always valid")
    }

    pub fn a(&self) -> [f64; 3] {
        [self.a1, self.a2, self.a3]
    }

    pub fn b(&self) -> [f64; 3] {
        [self.b1, self.b2, self.b3]
    }

    /// Number of free parameters: three intercepts plus one slope per non-stationary link.
    pub fn free_len(&self) -> usize {
        3 + self
            .links
            .components()
            .iter()
            .filter(|&&k| k != LinkKind::Stationary)
            .count()
    }

    /// Packs free parameters as [a1, a2, a3, then slopes of non-stationary components in order].
    pub fn to_free(&self) -> Vec<f64> {
        let mut v = vec![self.a1, self.a2, self.a3];
        for (kind, b) in self.links.components().iter().zip(self.b()) {
            if *kind != LinkKind::Stationary {
                v.push(b);
            }
        }
        v
    }

    /// Rebuilds parameters from the packing produced by `to_free`.
    pub fn with_free(&self, v: &[f64]) -> Result<Self> {
        if v.len() != self.free_len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} free parameters, got {}",
                self.free_len(),
                v.len()
            )));
        }
        let mut b = [0.0; 3];
        let mut next = 3;
        for (i, kind) in self.links.components().iter().enumerate() {
            if *kind != LinkKind::Stationary {
                b[i] = v[next];
                next += 1;
            }
        }
        CovParams::new([v[0], v[1], v[2]], b, self.links)
    }
}

/// Evaluates one link function, reporting whether the result was clamped.
pub fn link_eval_flagged(kind: LinkKind, a: f64, b: f64, mu: f64) -> (f64, bool) {
    let log_value = match kind {
        LinkKind::Stationary => a,
        LinkKind::Mdns => a + b * mu,
        LinkKind::Lmdns => a + b * mu.max(0.0).ln_1p(),
    };
    let raw = log_value.exp();
    let clamped = raw.clamp(CLAMP_LO, CLAMP_HI);
    (clamped, clamped != raw)
}

/// Evaluates one link function of the local mean; always positive.
pub fn link_eval(kind: LinkKind, a: f64, b: f64, mu: f64) -> f64 {
    link_eval_flagged(kind, a, b, mu).0
}

/// Per-site covariance components derived from the local mean vector.
#[derive(Debug, Clone)]
pub struct LocalParams {
    /// Nugget variances.
    pub tau2: DVector<f64>,
    /// Partial-sill standard deviations.
    pub sigma: DVector<f64>,
    /// Squared range scales.
    pub rho: DVector<f64>,
    /// True when any link evaluation hit the overflow clamp.
    pub clamped: bool,
}

/// Applies the three links elementwise to a mean vector.
pub fn local_params(mu: &DVector<f64>, eta: &CovParams) -> LocalParams {
    let n = mu.len();
    let mut clamped = false;
    let mut eval = |kind, a, b, m| {
        let (v, c) = link_eval_flagged(kind, a, b, m);
        clamped |= c;
        v
    };
    let tau2 = DVector::from_fn(n, |i, _| eval(eta.links.nugget, eta.a1, eta.b1, mu[i]));
    let sigma = DVector::from_fn(n, |i, _| eval(eta.links.sill, eta.a2, eta.b2, mu[i]));
    let rho = DVector::from_fn(n, |i, _| eval(eta.links.range, eta.a3, eta.b3, mu[i]));
    LocalParams { tau2, sigma, rho, clamped }
}

/// Nonstationary correlation between two sites at distance `h` with local
/// squared range scales `rho_i`, `rho_j`, in spatial dimension `dim`.
///
/// Reduces exactly to exp(-h / sqrt(rho)) when the two scales are equal.
pub fn nonstat_correlation(h: f64, rho_i: f64, rho_j: f64, dim: usize) -> f64 {
    let avg = 0.5 * (rho_i + rho_j);
    let (lo, hi) = if rho_i <= rho_j { (rho_i, rho_j) } else { (rho_j, rho_i) };
    // The scale ratio keeps the prefactor representable when both scales sit
    // at the clamp bounds, where their product would underflow to 0/0.
    let r = lo / hi;
    let ratio = 4.0 * r / ((1.0 + r) * (1.0 + r));
    let prefactor = if ratio == 1.0 {
        1.0
    } else if dim == 2 {
        ratio.sqrt()
    } else {
        ratio.powf(dim as f64 / 4.0)
    };
    prefactor * (-h / avg.sqrt()).exp()
}

/// Builds the covariance matrix from a distance matrix and local components.
///
/// Entry (i, j) is sigma_i sigma_j R(i, j), plus the nugget tau2_i on the diagonal.
pub fn covariance_from_parts(
    distances: &DMatrix<f64>,
    local: &LocalParams,
    dim: usize,
) -> DMatrix<f64> {
    let n = distances.nrows();
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        cov[(i, i)] = local.tau2[i] + local.sigma[i] * local.sigma[i];
        for j in (i + 1)..n {
            let r = nonstat_correlation(distances[(i, j)], local.rho[i], local.rho[j], dim);
            let v = local.sigma[i] * local.sigma[j] * r;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

/// Covariance matrix of the observations at `sites` with local mean `mu`.
pub fn covariance_matrix(
    sites: &SiteSet,
    mu: &DVector<f64>,
    eta: &CovParams,
) -> Result<DMatrix<f64>> {
    if mu.len() != sites.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} mean entries for {} sites",
            mu.len(),
            sites.n()
        )));
    }
    let local = local_params(mu, eta);
    Ok(covariance_from_parts(sites.distances(), &local, eta.dim))
}

/// Cross-covariance between two site collections; no nugget off the diagonal blocks.
pub fn cross_covariance(
    sites_a: &SiteSet,
    mu_a: &DVector<f64>,
    sites_b: &SiteSet,
    mu_b: &DVector<f64>,
    eta: &CovParams,
) -> Result<DMatrix<f64>> {
    if mu_a.len() != sites_a.n() || mu_b.len() != sites_b.n() {
        return Err(Error::DimensionMismatch(
            "mean vectors must align with their site sets".into(),
        ));
    }
    let la = local_params(mu_a, eta);
    let lb = local_params(mu_b, eta);
    Ok(DMatrix::from_fn(sites_a.n(), sites_b.n(), |i, j| {
        let sa = sites_a.site(i);
        let sb = sites_b.site(j);
        let h = (sa.lon - sb.lon).hypot(sa.lat - sb.lat);
        la.sigma[i] * lb.sigma[j] * nonstat_correlation(h, la.rho[i], lb.rho[j], eta.dim)
    }))
}

/// Jitter multipliers applied to the mean diagonal after a failed factorization.
const JITTER_LEVELS: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Cholesky factorization with a bounded diagonal-jitter retry schedule.
///
/// On failure adds 1e-10 times the mean diagonal, escalating tenfold per retry
/// up to 1e-6, then reports the matrix as not positive-definite. The `day`
/// argument only annotates the error.
pub fn spd_cholesky(matrix: &DMatrix<f64>, day: Option<usize>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(chol) = Cholesky::new(matrix.clone()) {
        return Ok(chol);
    }
    let mean_diag = matrix.diagonal().mean();
    for level in JITTER_LEVELS {
        let mut jittered = matrix.clone();
        let bump = level * mean_diag;
        for i in 0..jittered.nrows() {
            jittered[(i, i)] += bump;
        }
        if let Some(chol) = Cholesky::new(jittered) {
            return Ok(chol);
        }
    }
    Err(Error::NotPositiveDefinite { day })
}
