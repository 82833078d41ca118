//! Temporary diagnostic: likelihood geometry around fitted vs truth-structured points.

use meandep::covariance::{CovParams, LinkFamily};
use meandep::fitting::{fit_full_mle, fit_onestep, fit_stationary, FitConfig};
use meandep::likelihood::{penalized_loglik, MeanModel, ModelState};
use meandep::simulation::{neutral_penalty, simulate_replicate, SimConfig};

fn ll_at(
    data: &meandep::simulation::ReplicateData,
    betas: &nalgebra::DMatrix<f64>,
    a: [f64; 3],
    b: [f64; 3],
) -> f64 {
    let (beta0, omega) = neutral_penalty(3);
    let eta = CovParams::new(a, b, LinkFamily::MDNS).unwrap();
    let mean = MeanModel::new(data.z.clone(), betas.clone(), beta0, omega).unwrap();
    penalized_loglik(&data.panel, &data.sites, &ModelState { mean, eta })
        .unwrap_or(f64::NEG_INFINITY)
}

fn main() {
    let cfg = SimConfig::standard(200, 10, 1.0, 4206);
    let fit_cfg = FitConfig::default();
    let (beta0, omega) = neutral_penalty(3);
    for k in [0usize, 1, 2] {
        let data = simulate_replicate(&cfg, k, false).unwrap();
        let stat =
            fit_stationary(&data.panel, &data.sites, &data.z, &beta0, &omega, &fit_cfg).unwrap();
        let one = fit_onestep(
            &data.panel, &data.sites, &data.z, &stat, LinkFamily::MDNS, &fit_cfg,
        )
        .unwrap();
        let full = fit_full_mle(&data.panel, &data.sites, &data.z, &one, &fit_cfg).unwrap();
        let e = &full.state.eta;
        let betas = full.state.mean.betas().clone();
        println!("rep {k}");
        println!("  full fit      ll {:10.2}  a ({:+.2},{:+.2},{:+.2}) b ({:+.3},{:+.3},{:+.3})",
            full.loglik, e.a1, e.a2, e.a3, e.b1, e.b2, e.b3);
        let base = ll_at(&data, &betas, [e.a1, e.a2, e.a3], [e.b1, e.b2, e.b3]);
        println!("  recomputed    ll {base:10.2}");
        let v1 = ll_at(&data, &betas, [-1.0, e.a2, e.a3], [0.1, e.b2, e.b3]);
        println!("  nugget@truth  ll {v1:10.2}");
        let v2 = ll_at(&data, &betas, [-1.0, e.a2, 4.0], [0.1, e.b2, -0.5]);
        println!("  +range@truth  ll {v2:10.2}");
        let v3 = ll_at(&data, &betas, [-1.0, 0.5, 4.0], [0.1, 0.5, -0.5]);
        println!("  eta@truth     ll {v3:10.2}");
        let v4 = ll_at(&data, &data.betas_true, [-1.0, 0.5, 4.0], [0.1, 0.5, -0.5]);
        println!("  truth+beta*   ll {v4:10.2}");
        let mut bg = data.betas_true.clone();
        let eta_t = CovParams::new([-1.0, 0.5, 4.0], [0.1, 0.5, -0.5], LinkFamily::MDNS).unwrap();
        for _ in 0..3 {
            let mut next = bg.clone();
            for t in 0..cfg.m {
                let mu = data.z.z() * bg.row(t).transpose();
                let cov =
                    meandep::covariance::covariance_matrix(&data.sites, &mu, &eta_t).unwrap();
                let chol = meandep::covariance::spd_cholesky(&cov, None).unwrap();
                let y = data.panel.values().column(t).into_owned();
                let si_y = chol.solve(&y);
                let si_z = chol.solve(data.z.z());
                let mut lhs = data.z.z().transpose() * &si_z;
                let oinv = omega.clone().try_inverse().unwrap();
                lhs += &oinv;
                let rhs = data.z.z().transpose() * si_y;
                let sol = lhs.lu().solve(&rhs).unwrap();
                next.set_row(t, &sol.transpose());
            }
            bg = next;
        }
        let v5 = ll_at(&data, &bg, [-1.0, 0.5, 4.0], [0.1, 0.5, -0.5]);
        println!("  truth+gls     ll {v5:10.2}");
        // stationary basin scan in a1 at the stationary fit's other params
        let sb = stat.state.mean.betas().clone();
        let se = &stat.state.eta;
        print!("  stat a1 scan ll:");
        for a1 in [-17.0, -8.0, -4.0, -2.0, -1.0, 0.0] {
            let v = ll_at(&data, &sb, [a1, se.a2, se.a3], [0.0, 0.0, 0.0]);
            print!(" {a1}:{v:.2}");
        }
        println!();
    }
}
