//! Generates the bundled synthetic station panel under data/synthetic_pr/.

use meandep::covariance::{covariance_matrix, spd_cholesky, CovParams, LinkFamily, LinkKind};
use meandep::geometry::{Site, SiteSet};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::io::Write;

const N: usize = 47;
const M: usize = 31;
const SEED: u64 = 20130501;

/// Smooth ridge running along the island's long axis, in kilometers.
fn elevation(lon: f64, lat: f64) -> f64 {
    let x = (lon + 66.5) / 0.8;
    let y = (lat - 18.15) / 0.25;
    let ridge = (-(y * y) * 2.2).exp() * (1.0 - 0.55 * x * x).max(0.0);
    (1.05 * ridge).max(0.0)
}

fn main() {
    let mut rng = ChaCha12Rng::seed_from_u64(SEED);
    let sites: Vec<Site> = (0..N)
        .map(|_| {
            let lon = rng.random_range(-67.25..-65.75);
            let lat = rng.random_range(17.95..18.45);
            Site::with_elev(lon, lat, elevation(lon, lat))
        })
        .collect();
    let site_set = SiteSet::new(sites.clone()).expect("valid sites");

    let links = LinkFamily {
        nugget: LinkKind::Lmdns,
        sill: LinkKind::Lmdns,
        range: LinkKind::Mdns,
    };
    let eta = CovParams::new([-3.0, -1.0, -0.65], [0.8, 0.9, -0.1], links).expect("finite");

    let lon_bar = sites.iter().map(|s| s.lon).sum::<f64>() / N as f64;
    let lat_bar = sites.iter().map(|s| s.lat).sum::<f64>() / N as f64;
    let elev_bar = sites.iter().map(|s| s.elev.unwrap()).sum::<f64>() / N as f64;

    let mut values = DMatrix::zeros(N, M);
    let mut observed = vec![[true; M]; N];
    for t in 0..M {
        let phase = t as f64 / M as f64 * std::f64::consts::TAU;
        let base = 2.0 + 1.5 * (phase * 2.0).sin() + 0.6 * (phase * 5.0).cos();
        let a1 = rng.random_range(-0.5..0.5);
        let a2 = rng.random_range(-0.5..0.5);
        let g = rng.random_range(0.0..0.5) * base;
        let b0 = base - a1 * lon_bar - a2 * lat_bar - g * elev_bar;
        let mu = DVector::from_fn(N, |i, _| {
            b0 + a1 * sites[i].lon + a2 * sites[i].lat + g * sites[i].elev.unwrap()
        });
        let cov = covariance_matrix(&site_set, &mu, &eta).expect("covariance");
        let chol = spd_cholesky(&cov, None).expect("factorizable");
        let white = DVector::from_fn(N, |_, _| {
            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
        });
        let y = mu + chol.l() * white;
        values.set_column(t, &y);
        let mut dropped = 0;
        for i in 0..N {
            if dropped < 5 && rng.random_range(0.0..1.0) < 0.04 {
                observed[i][t] = false;
                dropped += 1;
            }
        }
    }

    std::fs::create_dir_all("data/synthetic_pr").expect("mkdir");
    let mut st = std::fs::File::create("data/synthetic_pr/stations.csv").expect("create");
    writeln!(st, "station_id,lon,lat,elev").unwrap();
    for (i, s) in sites.iter().enumerate() {
        writeln!(st, "PR{:03},{},{},{}", i + 1, s.lon, s.lat, s.elev.unwrap()).unwrap();
    }
    let mut ob = std::fs::File::create("data/synthetic_pr/observations.csv").expect("create");
    writeln!(ob, "station_id,day,value").unwrap();
    for t in 0..M {
        for i in 0..N {
            if observed[i][t] {
                writeln!(ob, "PR{:03},2013-05-{:02},{}", i + 1, t + 1, values[(i, t)]).unwrap();
            }
        }
    }
    let total: usize = observed.iter().map(|r| r.iter().filter(|&&b| b).count()).sum();
    println!("wrote {N} stations, {M} days, {total} observations");
}
