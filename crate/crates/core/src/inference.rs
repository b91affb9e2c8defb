//! Maximization of the frozen-draw log-likelihood and bootstrap standard errors.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{FrozenLikelihood, Weights};
use crate::model::{ParameterDomain, SelectionModel};
use crate::numerics::Numerics;
use crate::rng::{Purpose, Streams};
use crate::series::ObservationSeries;

/// Outcome of a maximization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    pub theta_hat: Vec<f64>,
    pub log_lik: f64,
    pub evaluations: usize,
    pub converged: bool,
    pub bootstrap_se: Option<Vec<f64>>,
}

/// Non-finite objective values count as the worst possible.
fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Brent's method (golden section with parabolic steps) for a maximum of `f`
/// on `[a, b]`. The returned point is within about `xtol` of a local maximum;
/// `f` is only evaluated inside `[a, b]`. A maximum within tolerance of a
/// bound is compared against the bound itself.
pub fn brent_maximize(f: impl FnMut(f64) -> f64, a: f64, b: f64, xtol: f64, max_eval: usize) -> Result<MleResult> {
    brent_maximize_from(f, a, b, a + CGOLD * (b - a), xtol, max_eval)
}

const CGOLD: f64 = 0.381_966_011_250_105_1;

/// As [`brent_maximize`], with the first trial point `x0` inside `[a, b]`.
pub fn brent_maximize_from(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    x0: f64,
    xtol: f64,
    max_eval: usize,
) -> Result<MleResult> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::arg(format!("Brent needs a finite interval with a < b, got [{a}, {b}]")));
    }
    if !(xtol > 0.0) || max_eval < 1 {
        return Err(Error::arg("Brent needs xtol > 0 and a positive evaluation budget"));
    }
    if !(a..=b).contains(&x0) {
        return Err(Error::arg(format!("Brent start {x0} is outside [{a}, {b}]")));
    }
    // minimize g = -f; -inf objective values become +inf here
    let mut g = |x: f64| -sanitize(f(x));
    let (mut lo, mut hi) = (a, b);
    let mut x = x0;
    let (mut w, mut v) = (x, x);
    let mut fx = g(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut evals = 1;
    let (mut d, mut e) = (0.0f64, 0.0f64);
    let mut converged = false;
    loop {
        let xm = 0.5 * (lo + hi);
        let tol1 = 1e-15 * x.abs() + xtol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (hi - lo) {
            converged = true;
            break;
        }
        if evals >= max_eval {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 && fx.is_finite() && fw.is_finite() && fv.is_finite() {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (lo - x) && p < q * (hi - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - lo < tol2 || hi - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { lo - x } else { hi - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let u = u.clamp(a, b);
        let fu = g(u);
        evals += 1;
        if fu <= fx {
            if u >= x {
                lo = x;
            } else {
                hi = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                lo = u;
            } else {
                hi = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    // the iteration never lands exactly on a bound; check the closer one
    let tol = 2.0 * (1e-15 * x.abs() + xtol / 3.0);
    let edge = if x - a <= tol { Some(a) } else if b - x <= tol { Some(b) } else { None };
    if let Some(edge) = edge.filter(|&edge| edge != x) {
        let fe = g(edge);
        evals += 1;
        if fe < fx {
            x = edge;
            fx = fe;
        }
    }
    Ok(MleResult {
        theta_hat: vec![x],
        log_lik: -fx,
        evaluations: evals,
        converged,
        bootstrap_se: None,
    })
}

/// Nelder-Mead over the free coordinates of `domain` (those with
/// `lower < upper`), with every trial point projected onto the box.
/// Each run stops when all vertices lie within `xtol / 2` of the best one;
/// runs restart around the optimum until it moves by less than `xtol / 2`.
pub fn simplex_maximize(
    mut f: impl FnMut(&[f64]) -> f64,
    domain: &ParameterDomain,
    start: &[f64],
    xtol: f64,
    max_eval: usize,
) -> Result<MleResult> {
    if start.len() != domain.dim() || !domain.contains(start) {
        return Err(Error::arg("simplex start must lie in the domain"));
    }
    let free = domain.free_indices();
    let (lower, upper) = (domain.lower(), domain.upper());
    let embed = |z: &[f64]| -> Vec<f64> {
        let mut th = start.to_vec();
        for (&i, &zi) in free.iter().zip(z) {
            th[i] = zi.clamp(lower[i], upper[i]);
        }
        th
    };
    let project = |z: &mut [f64]| {
        for (&i, zi) in free.iter().zip(z.iter_mut()) {
            *zi = zi.clamp(lower[i], upper[i]);
        }
    };
    let mut evals = 0;
    let mut eval = |z: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        -sanitize(f(&embed(z)))
    };
    let n = free.len();
    let z0: Vec<f64> = free.iter().map(|&i| start[i]).collect();
    if n == 0 {
        let v = eval(&z0, &mut evals);
        return Ok(MleResult {
            theta_hat: start.to_vec(),
            log_lik: -v,
            evaluations: evals,
            converged: true,
            bootstrap_se: None,
        });
    }
    let steps: Vec<f64> = free.iter().map(|&i| 0.1 * (upper[i] - lower[i])).collect();
    let limits: Vec<(f64, f64)> = free.iter().map(|&i| (lower[i], upper[i])).collect();
    let tol = 0.5 * xtol;
    let (mut best, mut best_value, mut converged) =
        nelder_mead(&mut eval, &mut evals, &z0, &steps, &limits, &project, tol, max_eval);
    // restart around the optimum until it stops moving; a simplex that
    // collapsed onto a face of the box would otherwise stop early
    while converged && evals < max_eval {
        let (z, v, c) = nelder_mead(&mut eval, &mut evals, &best, &steps, &limits, &project, tol, max_eval);
        let moved = z.iter().zip(&best).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        converged = c;
        if v <= best_value {
            best = z;
            best_value = v;
        }
        if moved < tol {
            break;
        }
    }
    Ok(MleResult {
        theta_hat: embed(&best),
        log_lik: -best_value,
        evaluations: evals,
        converged,
        bootstrap_se: None,
    })
}

/// One Nelder-Mead run minimizing `eval` from `z0`; returns the best vertex,
/// its value and whether the simplex shrank below `xtol`.
#[allow(clippy::too_many_arguments)]
fn nelder_mead(
    eval: &mut impl FnMut(&[f64], &mut usize) -> f64,
    evals: &mut usize,
    z0: &[f64],
    steps: &[f64],
    limits: &[(f64, f64)],
    project: &impl Fn(&mut [f64]),
    xtol: f64,
    max_eval: usize,
) -> (Vec<f64>, f64, bool) {
    let n = z0.len();
    let mut simplex = vec![z0.to_vec()];
    for j in 0..n {
        let mut z = z0.to_vec();
        z[j] = if z0[j] + steps[j] <= limits[j].1 { z0[j] + steps[j] } else { z0[j] - steps[j] };
        simplex.push(z);
    }
    let mut values: Vec<f64> = simplex.iter().map(|z| eval(z, evals)).collect();
    let mut converged = false;
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&k| simplex[k].clone()).collect();
        values = order.iter().map(|&k| values[k]).collect();
        let diameter = simplex[1..]
            .iter()
            .map(|z| z.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diameter < xtol {
            converged = true;
            break;
        }
        if *evals >= max_eval {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|z| z[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let along = |c: f64| -> Vec<f64> {
            let mut z: Vec<f64> = centroid.iter().zip(&worst).map(|(m, w)| m + c * (m - w)).collect();
            project(&mut z);
            z
        };
        let zr = along(1.0);
        let fr = eval(&zr, evals);
        if fr < values[0] {
            let ze = along(2.0);
            let fe = eval(&ze, evals);
            if fe < fr {
                simplex[n] = ze;
                values[n] = fe;
            } else {
                simplex[n] = zr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = zr;
            values[n] = fr;
            continue;
        }
        let (zc, fc) = if fr < values[n] {
            let z = along(0.5);
            let v = eval(&z, evals);
            (z, v)
        } else {
            let z = along(-0.5);
            let v = eval(&z, evals);
            (z, v)
        };
        if fc < values[n].min(fr) {
            simplex[n] = zc;
            values[n] = fc;
            continue;
        }
        for k in 1..=n {
            let z: Vec<f64> = simplex[k].iter().zip(&simplex[0]).map(|(a, b)| b + 0.5 * (a - b)).collect();
            values[k] = eval(&z, evals);
            simplex[k] = z;
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    (simplex[best].clone(), values[best], converged)
}

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimOptions {
    pub xtol: f64,
    pub max_eval: usize,
    /// Simplex starts: the box centre plus `starts - 1` random points.
    pub starts: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            xtol: 1e-6,
            max_eval: 500,
            starts: 3,
        }
    }
}

/// Maximize the frozen log-likelihood, optionally with bootstrap weights.
/// Scalar problems use Brent, others a multistart simplex whose random starts
/// come from `seed`.
pub fn maximize_frozen(
    frozen: &FrozenLikelihood,
    weights: Option<&Weights>,
    opts: &OptimOptions,
    seed: u64,
) -> Result<MleResult> {
    let domain = frozen.domain();
    let free = domain.free_indices();
    let objective = |th: &[f64]| match frozen.log_likelihood_weighted(th, weights) {
        Ok(l) => l.log_value,
        Err(_) => f64::NEG_INFINITY,
    };
    let mut best = if free.len() == 1 {
        let i = free[0];
        let base = domain.center();
        let mut r = brent_maximize(
            |v| {
                let mut th = base.clone();
                th[i] = v;
                objective(&th)
            },
            domain.lower()[i],
            domain.upper()[i],
            opts.xtol,
            opts.max_eval,
        )?;
        let mut th = base;
        th[i] = r.theta_hat[0];
        r.theta_hat = th;
        r
    } else {
        let mut rng = Streams::new(seed).stream(Purpose::Multistart, &[]);
        let mut best: Option<MleResult> = None;
        for s in 0..opts.starts.max(1) {
            let start: Vec<f64> = if s == 0 {
                domain.center()
            } else {
                domain
                    .lower()
                    .iter()
                    .zip(domain.upper())
                    .map(|(&l, &u)| if l == u { l } else { rng.random_range(l..=u) })
                    .collect()
            };
            let r = simplex_maximize(objective, domain, &start, opts.xtol, opts.max_eval)?;
            let evals = r.evaluations + best.as_ref().map_or(0, |b| b.evaluations);
            let mut pick = match best {
                Some(b) if b.log_lik >= r.log_lik => b,
                _ => r,
            };
            pick.evaluations = evals;
            best = Some(pick);
        }
        best.unwrap()
    };
    best.log_lik = frozen.log_likelihood_weighted(&best.theta_hat, weights)?.log_value;
    Ok(best)
}

/// Freeze draws for `series` and maximize.
pub fn estimate_mle(
    series: &ObservationSeries,
    model: Arc<dyn SelectionModel>,
    domain: ParameterDomain,
    n_samples: usize,
    seed: u64,
    numerics: &Numerics,
    opts: &OptimOptions,
) -> Result<(MleResult, FrozenLikelihood)> {
    let frozen = FrozenLikelihood::build(series, model, domain, n_samples, seed, numerics)?;
    let r = maximize_frozen(&frozen, None, opts, seed)?;
    Ok((r, frozen))
}

/// What a bootstrap replicate resamples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BootstrapUnit {
    /// Monte Carlo sample indices within each contribution.
    Samples,
    /// Observed increments.
    Observations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub unit: BootstrapUnit,
    pub replicates: usize,
    /// Sample standard deviation of the replicate maximizers, per coordinate.
    pub se: Vec<f64>,
    pub maximizers: Vec<Vec<f64>>,
    pub converged: Vec<bool>,
}

fn resample_counts<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<u32> {
    let mut c = vec![0u32; n];
    for _ in 0..n {
        c[rng.random_range(0..n)] += 1;
    }
    c
}

/// Replicate weights for bootstrap replicate `rep`.
pub fn bootstrap_weights(frozen: &FrozenLikelihood, unit: BootstrapUnit, seed: u64, rep: usize) -> Weights {
    let streams = Streams::new(seed);
    match unit {
        BootstrapUnit::Samples => Weights::Samples(
            frozen
                .records()
                .iter()
                .enumerate()
                .map(|(k, r)| resample_counts(r.len(), &mut streams.stream(Purpose::Bootstrap, &[rep as u64, k as u64])))
                .collect(),
        ),
        BootstrapUnit::Observations => Weights::Increments(resample_counts(
            frozen.increments(),
            &mut streams.stream(Purpose::Bootstrap, &[rep as u64]),
        )),
    }
}

/// Sample standard deviation per coordinate.
pub fn sample_sd(points: &[Vec<f64>]) -> Vec<f64> {
    let b = points.len() as f64;
    let dim = points.first().map_or(0, Vec::len);
    (0..dim)
        .map(|j| {
            let mean = points.iter().map(|p| p[j]).sum::<f64>() / b;
            (points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / (b - 1.0)).sqrt()
        })
        .collect()
}

/// Bootstrap standard error of the maximizer over `replicates` reweightings of
/// the frozen draws. Replicates run in parallel and are gathered by index.
pub fn bootstrap_se(
    frozen: &FrozenLikelihood,
    replicates: usize,
    unit: BootstrapUnit,
    seed: u64,
    opts: &OptimOptions,
) -> Result<BootstrapResult> {
    if replicates < 2 {
        return Err(Error::arg("bootstrap needs at least 2 replicates"));
    }
    let runs: Vec<MleResult> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let w = bootstrap_weights(frozen, unit, seed, rep);
            maximize_frozen(frozen, Some(&w), opts, seed ^ (rep as u64 + 1).wrapping_mul(0x9e37_79b9))
        })
        .collect::<Result<_>>()?;
    let maximizers: Vec<Vec<f64>> = runs.iter().map(|r| r.theta_hat.clone()).collect();
    Ok(BootstrapResult {
        unit,
        replicates,
        se: sample_sd(&maximizers),
        converged: runs.iter().map(|r| r.converged).collect(),
        maximizers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_quadratic_and_sine() {
        let r = brent_maximize(|x| -(x - 0.3) * (x - 0.3), -1.0, 1.0, 1e-8, 500).unwrap();
        assert!(r.converged && (r.theta_hat[0] - 0.3).abs() < 1e-8);
        let r = brent_maximize(f64::sin, 0.0, 3.0, 1e-8, 500).unwrap();
        assert!((r.theta_hat[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-8);
        for x0 in [0.0, 0.1, 2.9, 3.0] {
            let r = brent_maximize_from(f64::sin, 0.0, 3.0, x0, 1e-8, 500).unwrap();
            assert!((r.theta_hat[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-8, "{x0}");
        }
        let r = brent_maximize(|_| 2.5, -1.0, 1.0, 1e-6, 500).unwrap();
        assert!(r.converged && r.log_lik == 2.5 && (-1.0..=1.0).contains(&r.theta_hat[0]));
    }

    #[test]
    fn brent_budget_and_bounds() {
        let mut seen = Vec::new();
        let r = brent_maximize(
            |x| {
                seen.push(x);
                -(x - 0.9).powi(2)
            },
            0.0,
            1.0,
            1e-12,
            5,
        )
        .unwrap();
        assert!(!r.converged && r.evaluations == 5);
        assert!(seen.iter().all(|x| (0.0..=1.0).contains(x)));
        // maximum at the boundary
        let r = brent_maximize(|x| x, -1.0, 1.0, 1e-7, 500).unwrap();
        assert_eq!(r.theta_hat[0], 1.0);
        let r = brent_maximize(|x| -x, -1.0, 1.0, 1e-7, 500).unwrap();
        assert_eq!(r.theta_hat[0], -1.0);
        // -inf regions are avoided
        let r = brent_maximize(|x| if x < 0.0 { f64::NEG_INFINITY } else { -(x - 0.5).powi(2) }, -1.0, 1.0, 1e-8, 500)
            .unwrap();
        assert!((r.theta_hat[0] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn simplex_bowl_and_feasibility() {
        let d = ParameterDomain::new(vec![-1.0, -1.0, 0.0], vec![1.0, 1.0, 0.0]).unwrap();
        let c = [0.3, -0.2];
        let r = simplex_maximize(
            |x| -((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)),
            &d,
            &[0.0, 0.0, 0.0],
            1e-8,
            2000,
        )
        .unwrap();
        assert!(r.converged);
        assert!((r.theta_hat[0] - c[0]).abs() < 1e-5 && (r.theta_hat[1] - c[1]).abs() < 1e-5);
        let mut inside = true;
        let r = simplex_maximize(
            |x| {
                inside &= d.contains(x);
                x[0] + x[1]
            },
            &d,
            &[1.0, 1.0, 0.0],
            1e-8,
            2000,
        )
        .unwrap();
        assert!(inside && d.contains(&r.theta_hat));
        assert!((r.theta_hat[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn simplex_optimum_on_a_face() {
        // a simplex pressed against x0 = 1 shrinks there before x1 is resolved
        let d = ParameterDomain::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let xtol = 1e-6;
        for start in [[0.9, -0.9], [0.0, 0.0], [-1.0, 1.0]] {
            let r = simplex_maximize(
                |x| -(x[0] - 3.0).powi(2) - 0.01 * (x[1] - 0.3).powi(2),
                &d,
                &start,
                xtol,
                5000,
            )
            .unwrap();
            assert!(r.converged);
            assert!((r.theta_hat[0] - 1.0).abs() < xtol && (r.theta_hat[1] - 0.3).abs() < xtol, "{:?}", r.theta_hat);
        }
    }

    #[test]
    fn two_point_sd() {
        let sd = sample_sd(&[vec![0.1], vec![0.4]]);
        assert!((sd[0] - 0.3 / 2f64.sqrt()).abs() < 1e-15);
    }
}
