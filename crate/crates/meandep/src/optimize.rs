//! Derivative-free simplex maximization with restarts.

/// Simplex search settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimplexOptions {
    /// Total objective-evaluation budget shared across restarts.
    pub max_evals: usize,
    /// Restarts around the incumbent with halved steps after each inner convergence.
    pub restart_count: usize,
    /// Base step used to size the initial simplex per parameter.
    pub init_step: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions { max_evals: 2000, restart_count: 2, init_step: 0.25 }
    }
}

/// Outcome of a simplex search: best point ever evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Per-parameter initial steps: relative to each coordinate, with a tiny
/// absolute step for coordinates starting at zero. The tiny zero step lets
/// well-identified directions grow through expansion while weakly-identified
/// ones stay near their start instead of random-walking.
pub fn default_steps(x0: &[f64], init_step: f64) -> Vec<f64> {
    x0.iter()
        .map(|&v| if v == 0.0 { 0.001 * init_step } else { init_step * v.abs() })
        .collect()
}

/// Maximizes `f` from `x0` by Nelder-Mead, keeping the best point ever seen.
///
/// The start point is a vertex of the initial simplex, so the result never
/// falls below `f(x0)`. Non-finite objective values are treated as negative
/// infinity. After the simplex collapses, the search restarts around the
/// incumbent with halved steps until the restart count or the evaluation
/// budget is exhausted. `converged` reports whether the final inner run ended
/// by simplex collapse rather than budget exhaustion.
pub fn maximize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    steps: &[f64],
    opts: &SimplexOptions,
) -> SimplexOutcome {
    assert_eq!(x0.len(), steps.len(), "one step per parameter");
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };

    let mut best_x = x0.to_vec();
    let mut best_v = eval(&best_x, &mut evals);
    let mut converged = false;

    let mut scale = 1.0;
    for _restart in 0..=opts.restart_count {
        if evals >= opts.max_evals {
            break;
        }
        let (x, v, inner_converged) = nelder_mead(
            &mut eval,
            &best_x,
            steps,
            scale,
            best_v,
            opts.max_evals,
            &mut evals,
        );
        converged = inner_converged;
        if v > best_v {
            best_v = v;
            best_x = x;
        }
        scale *= 0.5;
    }

    SimplexOutcome { x: best_x, value: best_v, evals, converged }
}

/// One Nelder-Mead run; returns its best vertex and whether it collapsed.
fn nelder_mead<E: FnMut(&[f64], &mut usize) -> f64>(
    eval: &mut E,
    x0: &[f64],
    steps: &[f64],
    scale: f64,
    f0: f64,
    max_evals: usize,
    evals: &mut usize,
) -> (Vec<f64>, f64, bool) {
    let dim = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.to_vec(), f0));
    for i in 0..dim {
        if *evals >= max_evals {
            break;
        }
        let mut v = x0.to_vec();
        v[i] += scale * steps[i];
        let fv = eval(&v, evals);
        simplex.push((v, fv));
    }
    if simplex.len() < dim + 1 {
        let best = simplex
            .into_iter()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap();
        return (best.0, best.1, false);
    }

    loop {
        simplex.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        let best_v = simplex[0].1;
        let worst_v = simplex[dim].1;
        let spread = if best_v.is_finite() && worst_v.is_finite() {
            (best_v - worst_v).abs()
        } else {
            f64::INFINITY
        };
        if spread <= 1e-10 * (1.0 + best_v.abs()) {
            let (x, v) = simplex.swap_remove(0);
            return (x, v, true);
        }
        if *evals >= max_evals {
            let (x, v) = simplex.swap_remove(0);
            return (x, v, false);
        }

        let mut centroid = vec![0.0; dim];
        for (x, _) in simplex.iter().take(dim) {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / dim as f64;
            }
        }
        let at = |t: f64, from: &[f64]| -> Vec<f64> {
            centroid
                .iter()
                .zip(from)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let worst = simplex[dim].0.clone();
        let reflected = at(1.0, &worst);
        let fr = eval(&reflected, evals);
        if fr > simplex[0].1 {
            let expanded = at(2.0, &worst);
            let fe = eval(&expanded, evals);
            simplex[dim] = if fe > fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr > simplex[dim - 1].1 {
            simplex[dim] = (reflected, fr);
            continue;
        }
        let contracted = if fr > simplex[dim].1 {
            at(0.5, &worst)
        } else {
            at(-0.5, &worst)
        };
        let fc = eval(&contracted, evals);
        if fc > simplex[dim].1.max(fr) {
            simplex[dim] = (contracted, fc);
            continue;
        }
        let anchor = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            for (xi, ai) in vertex.0.iter_mut().zip(&anchor) {
                *xi = ai + 0.5 * (*xi - ai);
            }
            if *evals >= max_evals {
                vertex.1 = f64::NEG_INFINITY;
            } else {
                vertex.1 = eval(&vertex.0, evals);
            }
        }
    }
}
