//! Likelihood-ratio test for mean-dependent covariance structure.

use crate::covariance::LinkFamily;
use crate::error::{Error, Result};
use crate::fitting::{
    fit_full_mle, fit_onestep, fit_stationary, FitConfig, FitMethod, FitResult,
};
use crate::geometry::{DesignMatrix, ObservationPanel, SiteSet};
use crate::special;
use nalgebra::{DMatrix, DVector};

/// Rejection decisions at the three standard levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RejectFlags {
    pub alpha_10: bool,
    pub alpha_05: bool,
    pub alpha_01: bool,
}

/// Likelihood-ratio test outcome.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LrtResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub reject_at: RejectFlags,
}

impl LrtResult {
    /// Builds the result from a statistic, deriving the p-value and decisions
    /// from the implemented chi-square survival function.
    pub fn from_statistic(statistic: f64, df: usize) -> Result<Self> {
        if df == 0 {
            return Err(Error::InvalidParams(
                "likelihood-ratio test needs at least one restricted parameter".into(),
            ));
        }
        let p_value = special::chi_square_upper_tail(statistic, df as f64)?;
        Ok(LrtResult {
            statistic,
            df,
            p_value,
            reject_at: RejectFlags {
                alpha_10: p_value < 0.10,
                alpha_05: p_value < 0.05,
                alpha_01: p_value < 0.01,
            },
        })
    }
}

/// Twice the log-likelihood gap between nested fits, floored at zero.
///
/// Small negative gaps (within 1e-9, optimizer noise) are floored; larger
/// negatives indicate a failed null fit and are rejected.
pub fn lrt_statistic(fit_null: &FitResult, fit_alt: &FitResult) -> Result<f64> {
    if fit_null.data_fingerprint != fit_alt.data_fingerprint {
        return Err(Error::NotNested(
            "fits come from different data or designs".into(),
        ));
    }
    let raw = 2.0 * (fit_alt.loglik - fit_null.loglik);
    if raw < -1e-9 {
        return Err(Error::NotNested(format!(
            "alternative log-likelihood {} falls below the null {}",
            fit_alt.loglik, fit_null.loglik
        )));
    }
    Ok(raw.max(0.0))
}

/// Chi-square upper tail; see `special::chi_square_upper_tail`.
pub fn chi_square_upper_tail(x: f64, df: usize) -> Result<f64> {
    special::chi_square_upper_tail(x, df as f64)
}

/// A nonstationarity test together with the two fits it compared.
#[derive(Debug, Clone)]
pub struct NsTestOutcome {
    pub lrt: LrtResult,
    pub null_fit: FitResult,
    pub alt_fit: FitResult,
}

/// Tests the stationary null against a mean-dependent alternative.
///
/// The null is the stationary alternating fit. Under `FitMethod::Onestep` the
/// alternative freezes the null's coefficients; under `FitMethod::FullMle` it
/// refits everything jointly from a one-step warm start. Degrees of freedom
/// equal the number of mean-dependent components in `alt_links`.
pub fn test_nonstationarity(
    panel: &ObservationPanel,
    sites: &SiteSet,
    z: &DesignMatrix,
    beta0: &DVector<f64>,
    omega: &DMatrix<f64>,
    cfg: &FitConfig,
    method: FitMethod,
    alt_links: LinkFamily,
) -> Result<NsTestOutcome> {
    if method == FitMethod::Stationary {
        return Err(Error::InvalidParams(
            "the alternative must be one-step or full MLE".into(),
        ));
    }
    let df = alt_links
        .components()
        .iter()
        .filter(|&&k| k != crate::covariance::LinkKind::Stationary)
        .count();
    if df == 0 {
        return Err(Error::InvalidParams(
            "alternative links are fully stationary; nothing to test".into(),
        ));
    }

    let null_fit = fit_stationary(panel, sites, z, beta0, omega, cfg)?;
    let alt_fit = match method {
        FitMethod::Onestep => fit_onestep(panel, sites, z, &null_fit, alt_links, cfg)?,
        FitMethod::FullMle => {
            let one = fit_onestep(panel, sites, z, &null_fit, alt_links, cfg)?;
            fit_full_mle(panel, sites, z, &one, cfg)?
        }
        FitMethod::Stationary => unreachable!("rejected above"),
    };
    let statistic = lrt_statistic(&null_fit, &alt_fit)?;
    let lrt = LrtResult::from_statistic(statistic, df)?;
    Ok(NsTestOutcome { lrt, null_fit, alt_fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{
        covariance_from_parts, local_params, spd_cholesky, CovParams, LinkKind,
    };
    use crate::geometry::{PredictorSet, Site};
    use crate::likelihood::{logpdf_with_factor, penalized_loglik};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn small_data(
        seed: u64,
        n: usize,
        m: usize,
    ) -> (ObservationPanel, SiteSet, DesignMatrix, DVector<f64>, DMatrix<f64>) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let sites = SiteSet::new(
            (0..n)
                .map(|_| Site::new(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)))
                .collect(),
        )
        .unwrap();
        let z = DesignMatrix::build(&sites, PredictorSet::Sim3).unwrap();
        let eta = CovParams::stationary(-1.2, 0.1, -1.0);
        let local = local_params(&DVector::zeros(n), &eta);
        let cov = covariance_from_parts(sites.distances(), &local, 2);
        let chol = spd_cholesky(&cov, None).unwrap();
        let mut values = DMatrix::zeros(n, m);
        for t in 0..m {
            let beta = DVector::from_vec(vec![0.8, 0.4, -0.2]);
            let mu = z.z() * &beta;
            let white = DVector::from_fn(n, |_, _| {
                rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
            });
            values.set_column(t, &(mu + chol.l() * white));
        }
        let panel = ObservationPanel::complete(
            values,
            (0..m).map(|t| t.to_string()).collect(),
        )
        .unwrap();
        (panel, sites, z, DVector::zeros(3), DMatrix::identity(3, 3) * 10.0f64.exp())
    }

    #[test]
    fn identical_fits_give_zero_statistic() {
        let (panel, sites, z, beta0, omega) = small_data(1, 12, 2);
        let fit = fit_stationary(&panel, &sites, &z, &beta0, &omega, &FitConfig::default())
            .unwrap();
        assert_eq!(lrt_statistic(&fit, &fit).unwrap(), 0.0);
    }

    #[test]
    fn statistic_rejects_mismatched_data() {
        let (panel_a, sites_a, z_a, beta0, omega) = small_data(2, 10, 2);
        let (panel_b, sites_b, z_b, ..) = small_data(3, 10, 2);
        let cfg = FitConfig::default();
        let fa = fit_stationary(&panel_a, &sites_a, &z_a, &beta0, &omega, &cfg).unwrap();
        let fb = fit_stationary(&panel_b, &sites_b, &z_b, &beta0, &omega, &cfg).unwrap();
        assert!(matches!(lrt_statistic(&fa, &fb), Err(Error::NotNested(_))));
    }

    #[test]
    fn statistic_matches_expanded_form_oracle() {
        let (panel, sites, z, beta0, omega) = small_data(4, 8, 2);
        let cfg = FitConfig::default();
        let null = fit_stationary(&panel, &sites, &z, &beta0, &omega, &cfg).unwrap();
        let alt = fit_onestep(&panel, &sites, &z, &null, LinkFamily::MDNS, &cfg).unwrap();
        let stat = lrt_statistic(&null, &alt).unwrap();

        let expanded = |fit: &FitResult| -> f64 {
            let mut total = 0.0;
            let omega_chol = spd_cholesky(fit.state.mean.omega(), None).unwrap();
            for t in 0..panel.n_days() {
                let mu = fit.state.mean.day_mean(t);
                let local = local_params(&mu, &fit.state.eta);
                let cov = covariance_from_parts(sites.distances(), &local, 2);
                let chol = spd_cholesky(&cov, None).unwrap();
                let y = DVector::from_fn(sites.n(), |i, _| panel.values()[(i, t)]);
                let resid = y - mu;
                total += logpdf_with_factor(&chol, &resid);
                let dev = fit.state.mean.beta(t) - fit.state.mean.beta0();
                total += logpdf_with_factor(&omega_chol, &dev);
            }
            total
        };
        let want = 2.0 * (expanded(&alt) - expanded(&null));
        assert!((stat - want).abs() <= 1e-8, "stat {stat}, oracle {want}");
    }

    #[test]
    fn p_value_decreases_in_statistic() {
        let mut prev = 1.0;
        for s in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
            let r = LrtResult::from_statistic(s, 3).unwrap();
            assert!(r.p_value <= prev);
            prev = r.p_value;
        }
        let r = LrtResult::from_statistic(0.0, 3).unwrap();
        assert_relative_eq!(r.p_value, 1.0);
    }

    #[test]
    fn rejection_flags_follow_p_value() {
        let strong = LrtResult::from_statistic(30.0, 3).unwrap();
        assert!(strong.reject_at.alpha_10 && strong.reject_at.alpha_05 && strong.reject_at.alpha_01);
        let weak = LrtResult::from_statistic(0.1, 3).unwrap();
        assert!(!weak.reject_at.alpha_10 && !weak.reject_at.alpha_05 && !weak.reject_at.alpha_01);
    }

    #[test]
    fn onestep_test_shares_betas_across_fits() {
        let (panel, sites, z, beta0, omega) = small_data(5, 15, 3);
        let out = test_nonstationarity(
            &panel,
            &sites,
            &z,
            &beta0,
            &omega,
            &FitConfig::default(),
            FitMethod::Onestep,
            LinkFamily::MDNS,
        )
        .unwrap();
        assert_eq!(out.lrt.df, 3);
        assert_eq!(out.null_fit.state.mean.betas(), out.alt_fit.state.mean.betas());
        assert!(out.lrt.statistic >= 0.0);
        assert!(out.lrt.p_value > 0.0 && out.lrt.p_value <= 1.0);
        let check = penalized_loglik(&panel, &sites, &out.alt_fit.state).unwrap();
        assert_relative_eq!(check, out.alt_fit.loglik, epsilon = 1e-9);
    }

    #[test]
    fn range_stationary_alternative_has_two_degrees() {
        let (panel, sites, z, beta0, omega) = small_data(6, 12, 2);
        let links = LinkFamily {
            nugget: LinkKind::Mdns,
            sill: LinkKind::Mdns,
            range: LinkKind::Stationary,
        };
        let out = test_nonstationarity(
            &panel,
            &sites,
            &z,
            &beta0,
            &omega,
            &FitConfig::default(),
            FitMethod::Onestep,
            links,
        )
        .unwrap();
        assert_eq!(out.lrt.df, 2);
    }

    #[test]
    fn degenerate_single_day_smoke() {
        let (panel, sites, z, beta0, omega) = small_data(7, 5, 1);
        let out = test_nonstationarity(
            &panel,
            &sites,
            &z,
            &beta0,
            &omega,
            &FitConfig::default(),
            FitMethod::Onestep,
            LinkFamily::MDNS,
        )
        .unwrap();
        assert!(out.lrt.statistic.is_finite());
    }

    #[test]
    fn stationary_method_and_stationary_links_rejected() {
        let (panel, sites, z, beta0, omega) = small_data(8, 6, 1);
        let cfg = FitConfig::default();
        assert!(test_nonstationarity(
            &panel, &sites, &z, &beta0, &omega, &cfg,
            FitMethod::Stationary, LinkFamily::MDNS,
        )
        .is_err());
        assert!(test_nonstationarity(
            &panel, &sites, &z, &beta0, &omega, &cfg,
            FitMethod::Onestep, LinkFamily::STATIONARY,
        )
        .is_err());
    }
}
