//! Temporary diagnostic: per-day moments of one simulated replicate.

use meandep::covariance::covariance_matrix;
use meandep::simulation::{simulate_replicate, SimConfig};

fn main() {
    let cfg = SimConfig::standard(200, 10, 1.0, 4206);
    let data = simulate_replicate(&cfg, 0, false).unwrap();
    for t in 0..cfg.m {
        let y = data.panel.values().column(t);
        let n = y.len() as f64;
        let mean = y.sum() / n;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let beta_t = data.betas_true.row(t).transpose();
        let mu = data.z.z() * beta_t;
        let mu_bar = mu.sum() / n;
        let cov = covariance_matrix(&data.sites, &mu, &cfg.eta_true).unwrap();
        let diag_bar = cov.diagonal().sum() / n;
        println!(
            "day {:2}: mean(y) {:+7.3}  var(y) {:8.3}  mu_bar {:+6.3}  E diag {:8.3}",
            t + 1, mean, var, mu_bar, diag_bar
        );
    }
}
