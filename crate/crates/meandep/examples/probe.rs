//! Temporary probe: locates the failing stage in the prediction experiment.

use meandep::fitting::{fit_full_mle, fit_onestep, fit_stationary, FitConfig};
use meandep::prediction::{deviance, krige};
use meandep::simulation::{neutral_penalty, simulate_replicate, SimConfig};
use nalgebra::DVector;

fn main() {
    let cfg = SimConfig::standard(100, 5, 1.0, 4209);
    let fit_cfg = FitConfig::default();
    let links = cfg.eta_true.links;
    for k in 0..4 {
        let t0 = std::time::Instant::now();
        let data = match simulate_replicate(&cfg, k, true) {
            Ok(d) => d,
            Err(e) => {
                println!("rep {k}: simulate_replicate failed: {e}");
                continue;
            }
        };
        println!("rep {k}: simulated in {:.1}s", t0.elapsed().as_secs_f64());
        let (beta0, omega) = neutral_penalty(data.z.n_cols());
        let t0 = std::time::Instant::now();
        let stationary =
            match fit_stationary(&data.panel, &data.sites, &data.z, &beta0, &omega, &fit_cfg) {
                Ok(f) => f,
                Err(e) => {
                    println!("rep {k}: fit_stationary failed: {e}");
                    continue;
                }
            };
        println!(
            "rep {k}: stationary ll {:.2} in {:.1}s",
            stationary.loglik,
            t0.elapsed().as_secs_f64()
        );
        let t0 = std::time::Instant::now();
        let onestep =
            match fit_onestep(&data.panel, &data.sites, &data.z, &stationary, links, &fit_cfg) {
                Ok(f) => f,
                Err(e) => {
                    println!("rep {k}: fit_onestep failed: {e}");
                    continue;
                }
            };
        println!(
            "rep {k}: onestep ll {:.2} in {:.1}s",
            onestep.loglik,
            t0.elapsed().as_secs_f64()
        );
        let t0 = std::time::Instant::now();
        let full = match fit_full_mle(&data.panel, &data.sites, &data.z, &onestep, &fit_cfg) {
            Ok(f) => f,
            Err(e) => {
                println!("rep {k}: fit_full_mle failed: {e}");
                continue;
            }
        };
        println!(
            "rep {k}: full ll {:.2} in {:.1}s",
            full.loglik,
            t0.elapsed().as_secs_f64()
        );
        for (label, fit) in [("stationary", &stationary), ("onestep", &onestep), ("full", &full)] {
            for (t, test) in data.test_days.iter().enumerate() {
                let beta = fit.state.mean.beta(t);
                let y_train =
                    DVector::from_fn(data.sites.n(), |i, _| data.panel.values()[(i, t)]);
                let dist = match krige(
                    &data.sites,
                    &y_train,
                    &test.sites,
                    data.z.z(),
                    &test.z,
                    &beta,
                    &fit.state.eta,
                ) {
                    Ok(d) => d,
                    Err(e) => {
                        println!("rep {k} {label} day {t}: krige failed: {e}");
                        continue;
                    }
                };
                match deviance(&dist, &test.y) {
                    Ok(d) => {
                        let mse = (0..test.y.len())
                            .map(|i| (dist.mean[i] - test.y[i]).powi(2))
                            .sum::<f64>()
                            / test.y.len() as f64;
                        println!(
                            "rep {k} {label} day {t}: mse {mse:.4e} dev {d:.3e} floored {}",
                            dist.floored
                        );
                    }
                    Err(e) => {
                        println!("rep {k} {label} day {t}: deviance failed: {e}");
                        let eta = &fit.state.eta;
                        println!("  eta a {:?} b {:?}", eta.a(), eta.b());
                        let diag: Vec<f64> = (0..dist.cov.nrows()).map(|i| dist.cov[(i, i)]).collect();
                        let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
                        let dmax = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let eig = dist.cov.clone().symmetric_eigen().eigenvalues;
                        let emin = eig.iter().cloned().fold(f64::INFINITY, f64::min);
                        let emax = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        println!(
                            "  cov diag [{dmin:.3e}, {dmax:.3e}] eig [{emin:.3e}, {emax:.3e}] floored {}",
                            dist.floored
                        );
                        let mut nan = 0;
                        let mut inf = 0;
                        let mut max_off: f64 = 0.0;
                        for i in 0..dist.cov.nrows() {
                            for j in 0..dist.cov.ncols() {
                                let v = dist.cov[(i, j)];
                                if v.is_nan() {
                                    nan += 1;
                                } else if v.is_infinite() {
                                    inf += 1;
                                } else if i != j {
                                    max_off = max_off.max(v.abs());
                                }
                            }
                        }
                        let mean_bad = dist.mean.iter().filter(|v| !v.is_finite()).count();
                        let se_bad = dist.se.iter().filter(|v| !v.is_finite()).count();
                        println!(
                            "  cov nan {nan} inf {inf} max|off| {max_off:.3e}; mean nonfinite {mean_bad}; se nonfinite {se_bad}"
                        );
                    }
                }
            }
        }
    }
}
