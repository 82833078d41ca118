//! Special functions: log-gamma, regularized incomplete gamma, normal CDF and quantile.

use crate::error::{Error, Result};

/// Lanczos coefficients (g = 7, 9 terms).
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for positive real `x`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x)
    } else {
        let z = x - 1.0;
        let mut acc = LANCZOS[0];
        for (i, c) in LANCZOS.iter().enumerate().skip(1) {
            acc += c / (z + i as f64);
        }
        let t = z + 7.5;
        0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
    }
}

/// Regularized lower incomplete gamma P(a, x) by series expansion.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut n = 1.0;
    loop {
        term *= x / (a + n);
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            break;
        }
        n += 1.0;
        if n > 10_000.0 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Regularized upper incomplete gamma Q(a, x) by continued fraction (Lentz).
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized lower incomplete gamma P(a, x) for `a > 0`, `x >= 0`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_cf(a, x)
    }
}

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_cf(a, x)
    }
}

/// Upper tail probability of the chi-square distribution with `df` degrees of freedom.
pub fn chi_square_upper_tail(x: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) || !x.is_finite() {
        return Err(Error::InvalidParams(format!(
            "chi-square tail needs df > 0 and finite x, got df = {df}, x = {x}"
        )));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    Ok(gamma_q(df / 2.0, x / 2.0))
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    let half_sq = 0.5 * x * x;
    if x < 0.0 {
        0.5 * gamma_q(0.5, half_sq)
    } else {
        0.5 + 0.5 * gamma_p(0.5, half_sq)
    }
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile for `p` in (0, 1), by rational start and Newton polish.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParams(format!(
            "normal quantile needs p in (0, 1), got {p}"
        )));
    }
    let mut x = quantile_start(p);
    for _ in 0..8 {
        let err = normal_cdf(x) - p;
        let dens = normal_pdf(x);
        if dens <= 0.0 {
            break;
        }
        let step = err / dens;
        x -= step;
        if step.abs() < 1e-14 * (1.0 + x.abs()) {
            break;
        }
    }
    Ok(x)
}

/// Rational initial guess for the normal quantile, accurate to about 4.5e-4.
fn quantile_start(p: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    let r = p.min(1.0 - p);
    let t = (-2.0 * r.ln()).sqrt();
    let guess = t - (2.515_517 + 0.802_853 * t + 0.010_328 * t * t)
        / (1.0 + 1.432_788 * t + 0.189_269 * t * t + 0.001_308 * t * t * t);
    if p < 0.5 {
        -guess
    } else {
        guess
    }
}
