//! Temporary probe: per-replicate fit landing points in the comparison cell.

use meandep::fitting::{fit_full_mle, fit_onestep, fit_stationary, FitConfig};
use meandep::likelihood::{penalized_loglik, MeanModel, ModelState};
use meandep::simulation::{neutral_penalty, simulate_replicate, SimConfig};

fn main() {
    let cfg = SimConfig::standard(200, 10, 1.0, 4206);
    let fit_cfg = FitConfig::default();
    let links = cfg.eta_true.links;
    for k in 0..5 {
        let data = simulate_replicate(&cfg, k, false).unwrap();
        let (beta0, omega) = neutral_penalty(data.z.n_cols());
        let stationary =
            fit_stationary(&data.panel, &data.sites, &data.z, &beta0, &omega, &fit_cfg).unwrap();
        let onestep =
            fit_onestep(&data.panel, &data.sites, &data.z, &stationary, links, &fit_cfg).unwrap();
        let full = fit_full_mle(&data.panel, &data.sites, &data.z, &onestep, &fit_cfg).unwrap();

        let truth_state = ModelState {
            eta: cfg.eta_true,
            mean: MeanModel::new(
                data.z.clone(),
                stationary.state.mean.betas().clone(),
                beta0.clone(),
                omega.clone(),
            )
            .unwrap(),
        };
        let ll_truth = penalized_loglik(&data.panel, &data.sites, &truth_state).unwrap();

        println!("rep {k}: ll truth(beta_stat) {ll_truth:.2}");
        for (label, fit) in
            [("stat", &stationary), ("one ", &onestep), ("full", &full)]
        {
            let e = &fit.state.eta;
            println!(
                "  {label} ll {:>9.2}  a ({:+.2}, {:+.2}, {:+.2})  b ({:+.3}, {:+.3}, {:+.3})",
                fit.loglik, e.a1, e.a2, e.a3, e.b1, e.b2, e.b3
            );
        }
    }
}
