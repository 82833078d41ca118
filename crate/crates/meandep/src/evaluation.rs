//! Cross-validation over a model grid and link-diagnostic regressions.

use crate::covariance::{LinkFamily, LinkKind};
use crate::error::{Error, Result};
use crate::fitting::{fit_onestep, fit_stationary, FitConfig, FitResult};
use crate::geometry::{
    split_folds, DesignMatrix, ObservationPanel, PredictorSet, SiteSet,
};
use crate::nstest::lrt_statistic;
use crate::prediction::{interval_coverage, krige, prediction_score, se_quantiles_of};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// One covariance and design variant of the model comparison grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelSpec {
    pub predictor_set: PredictorSet,
    pub links: LinkFamily,
}

/// The five covariance variants compared in the model grid.
pub fn link_variants() -> [LinkFamily; 5] {
    [
        LinkFamily::STATIONARY,
        LinkFamily {
            nugget: LinkKind::Mdns,
            sill: LinkKind::Mdns,
            range: LinkKind::Stationary,
        },
        LinkFamily::MDNS,
        LinkFamily {
            nugget: LinkKind::Lmdns,
            sill: LinkKind::Lmdns,
            range: LinkKind::Stationary,
        },
        LinkFamily {
            nugget: LinkKind::Lmdns,
            sill: LinkKind::Lmdns,
            range: LinkKind::Mdns,
        },
    ]
}

/// All five covariance variants under each given predictor set.
pub fn grid_for(predictor_sets: &[PredictorSet]) -> Vec<ModelSpec> {
    let mut grid = Vec::with_capacity(5 * predictor_sets.len());
    for &predictor_set in predictor_sets {
        for links in link_variants() {
            grid.push(ModelSpec { predictor_set, links });
        }
    }
    grid
}

/// The ten-model grid: five covariance variants under each predictor set.
pub fn standard_grid() -> Vec<ModelSpec> {
    grid_for(&[PredictorSet::Linear4, PredictorSet::Quad7])
}

/// Cross-validation metrics for one model variant.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CvRow {
    pub predictor_set: PredictorSet,
    pub nugget_sill_link: LinkKind,
    pub range_link: LinkKind,
    /// Per-observation log-density of held-out values.
    pub score: f64,
    pub mse: f64,
    pub coverage95: f64,
    pub se_q05: f64,
    pub se_q50: f64,
    pub se_q95: f64,
    /// Full-data penalized log-likelihood.
    pub loglik: f64,
    /// Likelihood-ratio statistic against the stationary variant, zero for it.
    pub lrt_vs_stationary: f64,
}

/// Cross-validation report over a model grid.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CvReport {
    pub rows: Vec<CvRow>,
    pub folds: usize,
}

/// Coefficient prior moments taken from per-day least-squares estimates,
/// with a small diagonal ridge keeping the covariance positive definite.
pub fn empirical_penalty(
    panel: &ObservationPanel,
    z: &DesignMatrix,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let j = z.n_cols();
    let mut betas = Vec::new();
    for t in 0..panel.n_days() {
        let idx = panel.observed_indices(t);
        if idx.len() < j {
            continue;
        }
        let zt = z.subset(&idx);
        let yt = DVector::from_fn(idx.len(), |r, _| panel.values()[(idx[r], t)]);
        let svd = zt.z().clone().svd(true, true);
        let smax = svd.singular_values.max();
        let beta = svd
            .solve(&yt, smax * 1e-14)
            .map_err(|_| Error::SingularSystem)?;
        betas.push(DVector::from_column_slice(beta.as_slice()));
    }
    if betas.len() < 2 {
        return Err(Error::MTooSmall(betas.len()));
    }
    let count = betas.len() as f64;
    let mut mean = DVector::zeros(j);
    for b in &betas {
        mean += b;
    }
    mean /= count;
    let mut cov = DMatrix::zeros(j, j);
    for b in &betas {
        let d = b - &mean;
        cov += &d * d.transpose();
    }
    cov /= count - 1.0;
    let ridge = (1e-6 * cov.trace() / j as f64).max(1e-12);
    for i in 0..j {
        cov[(i, i)] += ridge;
    }
    Ok((mean, cov))
}

fn fit_model(
    panel: &ObservationPanel,
    sites: &SiteSet,
    z: &DesignMatrix,
    links: LinkFamily,
    cfg: &FitConfig,
) -> Result<(FitResult, FitResult)> {
    let (beta0, omega) = empirical_penalty(panel, z)?;
    let stationary = fit_stationary(panel, sites, z, &beta0, &omega, cfg)?;
    if links.is_fully_stationary() {
        let fit = stationary.clone();
        return Ok((stationary, fit));
    }
    let fit = fit_onestep(panel, sites, z, &stationary, links, cfg)?;
    Ok((stationary, fit))
}

fn with_fold_context<T>(fold: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::InvalidConfig(format!("fold {fold}: {e}")))
}

fn cv_row(
    panel: &ObservationPanel,
    sites: &SiteSet,
    spec: &ModelSpec,
    folds: &[Vec<usize>],
    cfg: &FitConfig,
) -> Result<CvRow> {
    if spec.links.nugget != spec.links.sill {
        return Err(Error::InvalidParams(
            "grid variants tie the nugget and sill links together".into(),
        ));
    }
    let z_full = DesignMatrix::build(sites, spec.predictor_set)?;
    let (stationary_full, fit_full) = fit_model(panel, sites, &z_full, spec.links, cfg)?;
    let lrt = if spec.links.is_fully_stationary() {
        0.0
    } else {
        lrt_statistic(&stationary_full, &fit_full)?
    };

    let mut score_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut covered = 0.0;
    let mut total = 0usize;
    let mut all_se = Vec::new();
    for (f, test_idx) in folds.iter().enumerate() {
        let train_idx: Vec<usize> =
            (0..sites.n()).filter(|i| !test_idx.contains(i)).collect();
        let train_sites = with_fold_context(f, sites.subset(&train_idx))?;
        let z_train = z_full.subset(&train_idx);
        let panel_train = with_fold_context(f, panel.subset_sites(&train_idx))?;
        let (_, fit) = with_fold_context(
            f,
            fit_model(&panel_train, &train_sites, &z_train, spec.links, cfg),
        )?;
        for t in 0..panel.n_days() {
            let tr_obs: Vec<usize> = (0..train_idx.len())
                .filter(|&r| panel_train.observed()[(r, t)])
                .collect();
            let te_obs: Vec<usize> = test_idx
                .iter()
                .copied()
                .filter(|&i| panel.observed()[(i, t)])
                .collect();
            if te_obs.is_empty() {
                continue;
            }
            let tr_sites = with_fold_context(f, train_sites.subset(&tr_obs))?;
            let z_tr = z_train.subset(&tr_obs);
            let y_tr = DVector::from_fn(tr_obs.len(), |r, _| {
                panel_train.values()[(tr_obs[r], t)]
            });
            let te_sites = with_fold_context(f, sites.subset(&te_obs))?;
            let z_te = z_full.subset(&te_obs);
            let y_te =
                DVector::from_fn(te_obs.len(), |r, _| panel.values()[(te_obs[r], t)]);
            let beta = fit.state.mean.beta(t);
            let dist = with_fold_context(
                f,
                krige(
                    &tr_sites,
                    &y_tr,
                    &te_sites,
                    z_tr.z(),
                    z_te.z(),
                    &beta,
                    &fit.state.eta,
                ),
            )?;
            score_sum += prediction_score(&dist, &y_te)?;
            covered += interval_coverage(&dist, &y_te, 0.95)? * te_obs.len() as f64;
            for i in 0..te_obs.len() {
                let e = dist.mean[i] - y_te[i];
                sq_sum += e * e;
            }
            all_se.extend(dist.se.iter().copied());
            total += te_obs.len();
        }
    }
    if total == 0 {
        return Err(Error::InvalidConfig(
            "cross-validation produced no held-out observations".into(),
        ));
    }
    let (se_q05, se_q50, se_q95) = se_quantiles_of(&all_se)?;
    Ok(CvRow {
        predictor_set: spec.predictor_set,
        nugget_sill_link: spec.links.nugget,
        range_link: spec.links.range,
        score: score_sum / total as f64,
        mse: sq_sum / total as f64,
        coverage95: covered / total as f64,
        se_q05,
        se_q50,
        se_q95,
        loglik: fit_full.loglik,
        lrt_vs_stationary: lrt,
    })
}

/// K-fold cross-validation of every grid variant on one panel. Each variant
/// reports held-out prediction metrics plus its full-data log-likelihood and
/// likelihood-ratio statistic against its stationary counterpart.
pub fn crossval(
    panel: &ObservationPanel,
    sites: &SiteSet,
    model_grid: &[ModelSpec],
    k: usize,
    cfg: &FitConfig,
    seed: u64,
) -> Result<CvReport> {
    if model_grid.is_empty() {
        return Err(Error::InvalidConfig("empty model grid".into()));
    }
    cfg.validate()?;
    let folds = split_folds(sites, k, seed)?;
    let rows: Vec<CvRow> = model_grid
        .par_iter()
        .map(|spec| cv_row(panel, sites, spec, &folds, cfg))
        .collect::<Result<_>>()?;
    Ok(CvReport { rows, folds: folds.len() })
}

/// Fitted line from an ordinary least-squares regression of y on x.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OlsLine {
    pub slope: f64,
    pub intercept: f64,
}

fn ols_line(x: &[f64], y: &[f64]) -> OlsLine {
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        sxx += (xi - xm) * (xi - xm);
        sxy += (xi - xm) * (yi - ym);
    }
    if sxx < 1e-12 * (1.0 + xm * xm) {
        return OlsLine { slope: 0.0, intercept: ym };
    }
    let slope = sxy / sxx;
    OlsLine { slope, intercept: ym - slope * xm }
}

/// Per-day covariance estimates against the day's average value.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinkDayRow {
    pub day: String,
    pub mean: f64,
    pub log1p_mean: f64,
    pub log_nugget: f64,
    pub log_sill: f64,
    pub log_range: f64,
}

/// Link-diagnostic table: daily estimates and the six screening regressions.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinkDiagnostics {
    pub rows: Vec<LinkDayRow>,
    pub skipped_days: Vec<String>,
    pub log_nugget_vs_mean: OlsLine,
    pub log_nugget_vs_log1p_mean: OlsLine,
    pub log_sill_vs_mean: OlsLine,
    pub log_sill_vs_log1p_mean: OlsLine,
    pub log_range_vs_mean: OlsLine,
    pub log_range_vs_log1p_mean: OlsLine,
}

/// Screens link choices: fits each day alone with a constant mean and a
/// stationary exponential covariance, then regresses the log parameter
/// estimates on the daily mean and on log(1 + mean). Days with fewer than
/// four observations, or a mean at or below -1, are skipped.
pub fn diagnose_links(
    panel: &ObservationPanel,
    sites: &SiteSet,
    cfg: &FitConfig,
) -> Result<LinkDiagnostics> {
    cfg.validate()?;
    let beta0 = DVector::zeros(1);
    let omega = DMatrix::from_element(1, 1, 10.0f64.exp());
    let mut rows = Vec::new();
    let mut skipped_days = Vec::new();
    for t in 0..panel.n_days() {
        let label = panel.day_labels()[t].clone();
        let idx = panel.observed_indices(t);
        if idx.len() < 4 {
            skipped_days.push(label);
            continue;
        }
        let y = DVector::from_fn(idx.len(), |r, _| panel.values()[(idx[r], t)]);
        let mean = y.iter().sum::<f64>() / idx.len() as f64;
        if 1.0 + mean <= 0.0 {
            skipped_days.push(label);
            continue;
        }
        let day_sites = sites.subset(&idx)?;
        let z = DesignMatrix::custom(DMatrix::from_element(idx.len(), 1, 1.0))?;
        let values = DMatrix::from_fn(idx.len(), 1, |r, _| y[r]);
        let day_panel = ObservationPanel::complete(values, vec![label.clone()])?;
        let fit = fit_stationary(&day_panel, &day_sites, &z, &beta0, &omega, cfg)?;
        rows.push(LinkDayRow {
            day: label,
            mean,
            log1p_mean: (1.0 + mean).ln(),
            log_nugget: fit.state.eta.a1,
            log_sill: fit.state.eta.a2,
            log_range: fit.state.eta.a3,
        });
    }
    if rows.len() < 2 {
        return Err(Error::MTooSmall(rows.len()));
    }
    let means: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    let log_means: Vec<f64> = rows.iter().map(|r| r.log1p_mean).collect();
    let nuggets: Vec<f64> = rows.iter().map(|r| r.log_nugget).collect();
    let sills: Vec<f64> = rows.iter().map(|r| r.log_sill).collect();
    let ranges: Vec<f64> = rows.iter().map(|r| r.log_range).collect();
    Ok(LinkDiagnostics {
        log_nugget_vs_mean: ols_line(&means, &nuggets),
        log_nugget_vs_log1p_mean: ols_line(&log_means, &nuggets),
        log_sill_vs_mean: ols_line(&means, &sills),
        log_sill_vs_log1p_mean: ols_line(&log_means, &sills),
        log_range_vs_mean: ols_line(&means, &ranges),
        log_range_vs_log1p_mean: ols_line(&log_means, &ranges),
        rows,
        skipped_days,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimize::SimplexOptions;
    use crate::simulation::{simulate_replicate, SimConfig};
    use approx::assert_relative_eq;

    fn quick_cfg() -> FitConfig {
        FitConfig {
            max_outer_iters: 20,
            rel_ll_tol: 1e-5,
            optimizer: SimplexOptions { max_evals: 400, restart_count: 1, init_step: 0.25 },
            seed: 0,
        }
    }

    #[test]
    fn grid_has_ten_tied_variants() {
        let grid = standard_grid();
        assert_eq!(grid.len(), 10);
        assert_eq!(
            grid.iter().filter(|s| s.predictor_set == PredictorSet::Linear4).count(),
            5
        );
        for spec in &grid {
            assert_eq!(spec.links.nugget, spec.links.sill);
            assert_ne!(spec.links.range, LinkKind::Lmdns);
        }
        assert_eq!(grid.iter().filter(|s| s.links.is_fully_stationary()).count(), 2);
    }

    #[test]
    fn empirical_penalty_matches_per_day_least_squares() {
        let cfg = SimConfig { replicates: 1, ..SimConfig::standard(12, 4, 0.0, 7) };
        let data = simulate_replicate(&cfg, 0, false).unwrap();
        let (beta0, omega) = empirical_penalty(&data.panel, &data.z).unwrap();
        let mut manual = Vec::new();
        for t in 0..4 {
            let zt = data.z.z();
            let yt = data.panel.values().column(t).into_owned();
            let beta = (zt.transpose() * zt)
                .try_inverse()
                .unwrap()
                * zt.transpose()
                * yt;
            manual.push(beta);
        }
        let mean = (&manual[0] + &manual[1] + &manual[2] + &manual[3]) / 4.0;
        for i in 0..3 {
            assert_relative_eq!(beta0[i], mean[i], max_relative = 1e-6, epsilon = 1e-8);
        }
        let mut cov = DMatrix::zeros(3, 3);
        for b in &manual {
            let d = b - &mean;
            cov += &d * d.transpose();
        }
        cov /= 3.0;
        let ridge = (1e-6 * cov.trace() / 3.0).max(1e-12);
        for i in 0..3 {
            for j in 0..3 {
                let expect = cov[(i, j)] + if i == j { ridge } else { 0.0 };
                assert_relative_eq!(
                    omega[(i, j)],
                    expect,
                    max_relative = 1e-5,
                    epsilon = 1e-7
                );
            }
        }
        assert!(nalgebra::Cholesky::new(omega).is_some());
    }

    #[test]
    fn crossval_smoke_produces_finite_ordered_metrics() {
        let sim = SimConfig { replicates: 1, ..SimConfig::standard(14, 3, 0.5, 11) };
        let data = simulate_replicate(&sim, 0, false).unwrap();
        let grid = vec![
            ModelSpec { predictor_set: PredictorSet::Sim3, links: LinkFamily::STATIONARY },
            ModelSpec { predictor_set: PredictorSet::Sim3, links: LinkFamily::MDNS },
        ];
        let report =
            crossval(&data.panel, &data.sites, &grid, 2, &quick_cfg(), 99).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.folds, 2);
        for row in &report.rows {
            assert!(row.score.is_finite());
            assert!(row.mse.is_finite() && row.mse >= 0.0);
            assert!((0.0..=1.0).contains(&row.coverage95));
            assert!(row.se_q05 <= row.se_q50 && row.se_q50 <= row.se_q95);
            assert!(row.loglik.is_finite());
            assert!(row.lrt_vs_stationary >= 0.0);
        }
        assert_eq!(report.rows[0].lrt_vs_stationary, 0.0);
    }

    #[test]
    fn crossval_metrics_survive_day_reordering() {
        let sim = SimConfig { replicates: 1, ..SimConfig::standard(12, 3, 0.0, 23) };
        let data = simulate_replicate(&sim, 0, false).unwrap();
        let grid = vec![ModelSpec {
            predictor_set: PredictorSet::Sim3,
            links: LinkFamily::STATIONARY,
        }];
        let cfg = quick_cfg();
        let report = crossval(&data.panel, &data.sites, &grid, 2, &cfg, 5).unwrap();

        let m = data.panel.n_days();
        let values = DMatrix::from_fn(data.sites.n(), m, |i, t| {
            data.panel.values()[(i, m - 1 - t)]
        });
        let labels: Vec<String> =
            (0..m).map(|t| data.panel.day_labels()[m - 1 - t].clone()).collect();
        let reversed = ObservationPanel::complete(values, labels).unwrap();
        let report_rev = crossval(&reversed, &data.sites, &grid, 2, &cfg, 5).unwrap();

        let a = &report.rows[0];
        let b = &report_rev.rows[0];
        assert_relative_eq!(a.score, b.score, max_relative = 1e-4);
        assert_relative_eq!(a.mse, b.mse, max_relative = 1e-4);
        assert_relative_eq!(a.loglik, b.loglik, max_relative = 1e-4);
        assert_relative_eq!(a.se_q50, b.se_q50, max_relative = 1e-4);
    }

    fn rising_mean_panel(
        n: usize,
        day_means: &[f64],
        seed: u64,
    ) -> (SiteSet, ObservationPanel) {
        use crate::covariance::CovParams;
        use crate::simulation::{replicate_rng, simulate_day, simulate_sites};
        let sim = SimConfig::standard(n, 2, 0.0, seed);
        let mut rng = replicate_rng(seed, 0);
        let sites = simulate_sites(&sim, &mut rng).unwrap();
        let ones = DMatrix::from_element(n, 1, 1.0);
        let links = LinkFamily {
            nugget: LinkKind::Stationary,
            sill: LinkKind::Mdns,
            range: LinkKind::Stationary,
        };
        let eta = CovParams::new([-3.0, -1.0, 4.0], [0.0, 0.5, 0.0], links).unwrap();
        let mut values = DMatrix::zeros(n, day_means.len());
        for (t, &mu) in day_means.iter().enumerate() {
            let beta = DVector::from_element(1, mu);
            let y = simulate_day(&sites, &ones, &beta, &eta, &mut rng).unwrap();
            values.set_column(t, &y);
        }
        let labels = (1..=day_means.len()).map(|t| t.to_string()).collect();
        (sites, ObservationPanel::complete(values, labels).unwrap())
    }

    #[test]
    fn diagnostics_recover_positive_sill_slope() {
        let (sites, panel) = rising_mean_panel(20, &[1.0, 2.0, 3.0, 4.0, 5.0], 31);
        let diag = diagnose_links(&panel, &sites, &quick_cfg()).unwrap();
        assert_eq!(diag.rows.len(), 5);
        assert!(diag.skipped_days.is_empty());
        assert!(
            diag.log_sill_vs_mean.slope > 0.0,
            "slope {} for means {:?} sills {:?}",
            diag.log_sill_vs_mean.slope,
            diag.rows.iter().map(|r| r.mean).collect::<Vec<_>>(),
            diag.rows.iter().map(|r| r.log_sill).collect::<Vec<_>>()
        );
    }

    #[test]
    fn diagnostics_on_identical_days_give_zero_slopes() {
        let sim = SimConfig { replicates: 1, ..SimConfig::standard(10, 2, 0.0, 41) };
        let data = simulate_replicate(&sim, 0, false).unwrap();
        let col = data.panel.values().column(0).into_owned();
        let values = DMatrix::from_fn(10, 3, |i, _| col[i]);
        let labels = vec!["1".into(), "2".into(), "3".into()];
        let panel = ObservationPanel::complete(values, labels).unwrap();
        let diag = diagnose_links(&panel, &data.sites, &quick_cfg()).unwrap();
        assert_eq!(diag.log_sill_vs_mean.slope, 0.0);
        assert_eq!(diag.log_range_vs_log1p_mean.slope, 0.0);
        assert_relative_eq!(
            diag.log_nugget_vs_mean.intercept,
            diag.rows[0].log_nugget,
            epsilon = 1e-9
        );
    }

    #[test]
    fn diagnostics_skip_thin_days() {
        let (sites, full) = rising_mean_panel(8, &[1.0, 2.0, 3.0], 51);
        let mut observed = DMatrix::from_element(8, 3, true);
        for i in 3..8 {
            observed[(i, 1)] = false;
        }
        let panel = ObservationPanel::new(
            full.values().clone(),
            observed,
            full.day_labels().to_vec(),
        )
        .unwrap();
        let diag = diagnose_links(&panel, &sites, &quick_cfg()).unwrap();
        assert_eq!(diag.rows.len(), 2);
        assert_eq!(diag.skipped_days, vec!["2".to_string()]);
    }
}
