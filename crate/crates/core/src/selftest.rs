//! Statistical self-checks against independent oracles.
//!
//! Each check reports the statistic it measured and the threshold it was held
//! to. `Level::Quick` shrinks sample sizes so the whole suite runs in seconds;
//! `Level::Full` uses the sizes the acceptance suite asserts on.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ancestral::{q_pmf_oracle, AncestralSampler};
use crate::bridge::BridgeSampler;
use crate::error::Result;
use crate::exactsim::{sample_marked_poisson, simulate_path};
use crate::inference::{
    bootstrap_se, brent_maximize, brent_maximize_from, maximize_frozen, BootstrapUnit, OptimOptions,
};
use crate::likelihood::FrozenLikelihood;
use crate::model::{CoupledModel, HaploidModel, MutationRates, ParameterDomain, SelectionModel};
use crate::neutral::{transition_density_estimate, transition_density_from_log, transition_density_oracle, LogFreq, NeutralKernel};
use crate::numerics::Numerics;
use crate::rng::{Purpose, Streams};
use crate::series::ObservationSeries;
use crate::stats::{chi_square_gof, ks_statistic, mean_se, tv_distance, GridCdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Quick,
    Full,
}

/// One measured property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    /// Passes when `statistic <= threshold`.
    pub fn at_most(name: impl Into<String>, statistic: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            statistic,
            threshold,
            passed: statistic <= threshold,
            detail: detail.into(),
        }
    }

    /// Passes when `statistic >= threshold`.
    pub fn at_least(name: impl Into<String>, statistic: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            statistic,
            threshold,
            passed: statistic >= threshold,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: statistic {:.6e} threshold {:.6e} ({})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.statistic,
            self.threshold,
            self.detail
        )
    }
}

fn mutation() -> MutationRates {
    MutationRates::new(0.02, 0.02).expect("valid rates")
}

/// Empirical law of `M` against the pmf from independently refined series.
pub fn ancestral_exactness(draws: usize, seed: u64) -> Result<Vec<Check>> {
    let num = Numerics::default();
    let streams = Streams::new(seed);
    let mut out = Vec::new();
    let cases = [(0.25, 0.04), (0.25, 0.5), (1.0, 0.04), (1.0, 0.5), (5.0, 0.04), (5.0, 0.5)];
    for (case, &(t, theta)) in cases.iter().enumerate() {
        let sampler = AncestralSampler::new(t, theta, &num)?;
        let mut rng = streams.stream(Purpose::Selftest, &[1, case as u64]);
        let mut counts: Vec<usize> = Vec::new();
        for _ in 0..draws {
            let m = sampler.sample(&mut rng)?;
            if m >= counts.len() {
                counts.resize(m + 1, 0);
            }
            counts[m] += 1;
        }
        let mut pmf = Vec::new();
        let mut cum = 0.0;
        let mut m = 0;
        while cum < 1.0 - 1e-12 && m < 10_000 {
            let q = q_pmf_oracle(m, t, theta, 1e-14, &num)?;
            pmf.push(q);
            cum += q;
            m += 1;
        }
        let tv = tv_distance(&counts, &pmf);
        let (chi, dof, p) = chi_square_gof(&counts, &pmf);
        let label = format!("ancestral law t={t} theta={theta}");
        out.push(Check::at_most(format!("{label} TV"), tv, 0.01, format!("{draws} draws")));
        out.push(Check::at_least(
            format!("{label} chi-square p"),
            p,
            1e-3,
            format!("chi2 {chi:.2} on {dof} dof"),
        ));
    }
    Ok(out)
}

/// Mean of the density estimator against the deterministic series value.
pub fn density_unbiasedness(cases: usize, draws: usize, seed: u64) -> Result<Vec<Check>> {
    let num = Numerics::default();
    let kernel = NeutralKernel::new(mutation());
    let streams = Streams::new(seed);
    let mut setup = streams.stream(Purpose::Selftest, &[2]);
    let mut out = Vec::new();
    for case in 0..cases {
        let x: f64 = setup.random_range(0.01..0.99);
        let y: f64 = setup.random_range(0.01..0.99);
        let t: f64 = setup.random_range(0.25..5.0);
        let sampler = AncestralSampler::new(t, mutation().theta(), &num)?;
        let mut rng = streams.stream(Purpose::Selftest, &[2, case as u64]);
        let mut values = Vec::with_capacity(draws);
        for _ in 0..draws {
            let m = sampler.sample(&mut rng)?;
            values.push(kernel.density_given_m(m, x, y)?);
        }
        let (mean, se) = mean_se(&values);
        let oracle = transition_density_oracle(x, y, t, &kernel, 1e-10, &num)?;
        out.push(Check::at_most(
            format!("density estimator x={x:.4} y={y:.4} t={t:.3}"),
            (mean - oracle).abs() / se,
            4.0,
            format!("mean {mean:.6e} oracle {oracle:.6e} se {se:.2e}, statistic in SE units"),
        ));
    }
    Ok(out)
}

/// Bridge midpoints against the quadrature-normalized product density.
pub fn bridge_midpoint(samples: usize, seed: u64) -> Result<Check> {
    let (x, y, t) = (0.2, 0.7, 1.0);
    let num = Numerics::default();
    let kernel = NeutralKernel::new(mutation());
    let bridge = BridgeSampler::new(&kernel, &num);
    let streams = Streams::new(seed);
    let mut zs = Vec::with_capacity(samples);
    for i in 0..samples {
        let mut rng = streams.stream(Purpose::Selftest, &[3, i as u64]);
        zs.push(bridge.sample_point(x, y, t / 2.0, t / 2.0, &mut rng)?.0);
    }
    let q = AncestralSampler::new(t / 2.0, mutation().theta(), &num)?;
    let (lx, ly) = (LogFreq::new(x), LogFreq::new(y));
    let f = |z: f64, zc: f64| {
        let lz = LogFreq::from_parts(z.ln(), zc.ln());
        transition_density_from_log(&q, lx, lz, &kernel, 1e-12).unwrap_or(f64::NAN)
            * transition_density_from_log(&q, lz, ly, &kernel, 1e-12).unwrap_or(f64::NAN)
    };
    let a = mutation().theta_a();
    let g = GridCdf::from_density(f, a, mutation().theta_big(), 4000);
    let ks = ks_statistic(&zs, |v| g.cdf(v));
    let norm = transition_density_oracle(x, y, t, &kernel, 1e-12, &num)?;
    Ok(Check::at_most(
        "bridge midpoint KS",
        ks,
        0.02,
        format!(
            "{samples} midpoints of (0.2 -> 0.7, t=1); quadrature mass {:.8} vs p(x,y;t) {:.8}",
            g.mass, norm
        ),
    ))
}

/// Mean Girsanov weight over neutral increments, which must be 1.
pub fn unit_mass(reps: usize, seed: u64) -> Result<Check> {
    let (u, dt, theta) = (0.3, 1.0, [0.7]);
    let num = Numerics::default();
    let model = HaploidModel::new(mutation());
    let kernel = NeutralKernel::new(mutation());
    let rate = model.sam_rate(&ParameterDomain::symmetric(1.0)?);
    let bounds = model.phi_bounds(&theta);
    let sampler = AncestralSampler::new(dt, mutation().theta(), &num)?;
    let bridge = BridgeSampler::new(&kernel, &num);
    let streams = Streams::new(seed);
    let mut w = Vec::with_capacity(reps);
    for i in 0..reps {
        let mut rng = streams.stream(Purpose::Selftest, &[4, i as u64]);
        let v = kernel.sample_transition_with(&sampler, u, &mut rng)?.y;
        let times = sample_marked_poisson(rate, dt, false, &mut rng)?.times;
        let sk = bridge.sample_skeleton(u, v, dt, &times, &mut rng)?;
        let mut weight =
            (model.potential(&[v], &theta) - model.potential(&[u], &theta) - dt * bounds.lower).exp();
        for &z in &sk.values {
            weight *= 1.0 - (model.phi(&[z], &theta) - bounds.lower) / rate;
        }
        w.push(weight);
    }
    let (mean, se) = mean_se(&w);
    Ok(Check::at_most(
        "Girsanov unit mass",
        (mean - 1.0).abs() / se,
        3.0,
        format!("mean {mean:.6} se {se:.2e} over {reps} increments, rate {rate:.5}, statistic in SE units"),
    ))
}

/// At `ϑ = 0` every contribution equals the neutral density estimate bit for bit.
pub fn neutral_reduction(seed: u64) -> Result<Check> {
    let num = Numerics::default();
    let model = HaploidModel::new(mutation());
    let kernel = NeutralKernel::new(mutation());
    let series = benchmark_series(seed, 20)?;
    let fz = FrozenLikelihood::build(&series, Arc::new(model), ParameterDomain::symmetric(1.0)?, 50, seed, &num)?;
    let mut mismatches = 0;
    let mut log_sum = 0.0;
    for i in 0..fz.increments() {
        let rec = &fz.increment_records(i)[0];
        let ms: Vec<usize> = rec.samples.iter().map(|s| s.m[0]).collect();
        let neutral = transition_density_estimate(rec.x[0], rec.y[0], &kernel, &ms)?;
        if fz.contribution(i, &[0.0])?.to_bits() != neutral.to_bits() {
            mismatches += 1;
        }
        log_sum += neutral.ln();
    }
    if fz.log_likelihood(&[0.0])?.log_value.to_bits() != log_sum.to_bits() {
        mismatches += 1;
    }
    Ok(Check::at_most(
        "neutral reduction (bitwise)",
        mismatches as f64,
        0.0,
        format!("{} increments compared", fz.increments()),
    ))
}

/// Haploid series with `ϑ = 0.7`, `θ_a = θ_A = 0.02`, unit gaps, started at 0.5.
pub fn benchmark_series(seed: u64, n: usize) -> Result<ObservationSeries> {
    let model = HaploidModel::new(mutation());
    let times: Vec<f64> = (1..=n).map(|i| i as f64).collect();
    let mut rng = Streams::new(seed).stream(Purpose::Simulation, &[0]);
    Ok(simulate_path(&model, &[0.7], &[0.5], &times, &Numerics::default(), &mut rng)?.series)
}

/// Half-width of the symmetric domain used for the benchmark: the smallest
/// of 1, 2, 4, 8 whose maximizer (at `n_samples`) is interior.
pub fn interior_domain(series: &ObservationSeries, n_samples: usize, seed: u64) -> Result<f64> {
    let num = Numerics::default();
    let model = Arc::new(HaploidModel::new(mutation()));
    let opts = OptimOptions::default();
    for c in [1.0, 2.0, 4.0, 8.0] {
        let fz = FrozenLikelihood::build(series, model.clone(), ParameterDomain::symmetric(c)?, n_samples, seed, &num)?;
        let r = maximize_frozen(&fz, None, &opts, seed)?;
        if r.theta_hat[0].abs() < c - 1e-3 {
            return Ok(c);
        }
    }
    Ok(8.0)
}

/// Summary of the Monte Carlo consistency study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub n_samples: usize,
    pub theta_hat: f64,
    pub se: Option<f64>,
}

/// MLE and bootstrap SE for growing `N` on one benchmark series.
pub fn consistency_trend(seed: u64, sizes: &[usize], reference: usize, replicates: usize) -> Result<(f64, Vec<TrendRow>, Vec<Check>)> {
    let num = Numerics::default();
    let series = benchmark_series(seed, 100)?;
    let c = interior_domain(&series, 100, seed)?;
    let domain = ParameterDomain::symmetric(c)?;
    let model: Arc<dyn SelectionModel> = Arc::new(HaploidModel::new(mutation()));
    let opts = OptimOptions::default();
    let mut rows = Vec::new();
    for &n in sizes.iter().chain(std::iter::once(&reference)) {
        let fz = FrozenLikelihood::build(&series, model.clone(), domain.clone(), n, seed, &num)?;
        let r = maximize_frozen(&fz, None, &opts, seed)?;
        let se = if n == reference {
            None
        } else {
            Some(bootstrap_se(&fz, replicates, BootstrapUnit::Samples, seed, &opts)?.se[0])
        };
        rows.push(TrendRow {
            n_samples: n,
            theta_hat: r.theta_hat[0],
            se,
        });
    }
    let last = &rows[sizes.len() - 1];
    let reference_hat = rows[sizes.len()].theta_hat;
    let se_last = last.se.unwrap_or(0.0);
    let mut checks = vec![Check::at_most(
        format!("MLE at N={} vs N={reference}", last.n_samples),
        (last.theta_hat - reference_hat).abs(),
        3.0 * se_last,
        format!("{:.5} vs {:.5}, threshold 3 SE", last.theta_hat, reference_hat),
    )];
    let ses: Vec<f64> = rows[..sizes.len()].iter().map(|r| r.se.unwrap_or(0.0)).collect();
    let decreasing = ses.windows(2).all(|w| w[1] < w[0]);
    checks.push(Check {
        name: "bootstrap SE strictly decreasing in N".into(),
        statistic: ses.windows(2).filter(|w| w[1] >= w[0]).count() as f64,
        threshold: 0.0,
        passed: decreasing,
        detail: format!("SE {:?} at N {:?}", ses, sizes),
    });
    checks.push(Check::at_most(
        format!("MLE at N={} near the simulating value 0.7", last.n_samples),
        (last.theta_hat - 0.7).abs(),
        0.15,
        format!("estimate {:.5}, domain [-{c}, {c}]", last.theta_hat),
    ));
    Ok((c, rows, checks))
}

/// Unlinked two-locus model: joint log-likelihood equals the sum of per-locus
/// ones on shared draws, and the simplex maximizer matches two Brent runs.
pub fn coupled_factorization(seed: u64, n_obs: usize, n_samples: usize, xtol: f64) -> Result<Vec<Check>> {
    let num = Numerics::default();
    let mu = mutation();
    let coupled = Arc::new(CoupledModel::new(2, mu)?);
    let times: Vec<f64> = (1..=n_obs).map(|i| i as f64).collect();
    let mut rng = Streams::new(seed).stream(Purpose::Simulation, &[1]);
    let series = simulate_path(coupled.as_ref(), &[0.35, -0.2, 0.0], &[0.5, 0.5], &times, &num, &mut rng)?.series;
    let half = 2.0;
    let domain = ParameterDomain::new(vec![-half, -half, 0.0], vec![half, half, 0.0])?;
    let joint = FrozenLikelihood::build(&series, coupled.clone(), domain.clone(), n_samples, seed, &num)?;
    let hap: Arc<dyn SelectionModel> = Arc::new(HaploidModel::new(mu));
    let scalar: Vec<FrozenLikelihood> = (0..2)
        .map(|k| {
            FrozenLikelihood::build_labelled(
                &series.column(k),
                hap.clone(),
                ParameterDomain::symmetric(2.0 * half)?,
                n_samples,
                seed,
                &num,
                &[k],
            )
        })
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for i in 0..=4 {
        for j in 0..=4 {
            let c0 = -half + 2.0 * half * i as f64 / 4.0;
            let c1 = -half + 2.0 * half * j as f64 / 4.0;
            let lj = joint.log_likelihood(&[c0, c1, 0.0])?.log_value;
            let ls = scalar[0].log_likelihood(&[2.0 * c0])?.log_value + scalar[1].log_likelihood(&[2.0 * c1])?.log_value;
            worst = worst.max((lj - ls).abs());
        }
    }
    let opts = OptimOptions {
        xtol,
        ..OptimOptions::default()
    };
    let simplex = maximize_frozen(&joint, None, &opts, seed)?;
    let mut gap: f64 = 0.0;
    let mut detail = String::new();
    for k in 0..2 {
        let f = |v: f64| scalar[k].log_likelihood(&[v]).map_or(f64::NEG_INFINITY, |l| l.log_value);
        // Brent in the haploid scale ϑ = 2c, so xtol in c needs 2 xtol in ϑ
        let b = brent_maximize(f, -2.0 * half, 2.0 * half, 2.0 * xtol, opts.max_eval)?;
        let c_brent = b.theta_hat[0] / 2.0;
        gap = gap.max((simplex.theta_hat[k] - c_brent).abs());
        detail.push_str(&format!("locus {k}: simplex {:.8} brent {:.8}; ", simplex.theta_hat[k], c_brent));
    }
    Ok(vec![
        Check::at_most(
            "unlinked loci: joint vs summed log-likelihood",
            worst,
            1e-10,
            format!("max abs difference over a 5x5 grid, N={n_samples}"),
        ),
        Check::at_most("unlinked loci: simplex vs per-locus Brent", gap, 2.0 * xtol, detail.trim_end_matches("; ").to_string()),
    ])
}

/// Largest successive change that stands out from both neighbours; a
/// discontinuity shows up as a ratio far above 1.
pub fn jump_ratio(values: &[f64]) -> f64 {
    let d: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let mut worst: f64 = 0.0;
    for i in 0..d.len() {
        let left = if i > 0 { d[i - 1] } else { 0.0 };
        let right = d.get(i + 1).copied().unwrap_or(0.0);
        let scale = left.max(right) + 1e-12 * (1.0 + values[i].abs());
        worst = worst.max(d[i] / scale);
    }
    worst
}

/// Jump audit of the frozen log-likelihood on a grid and agreement of Brent
/// runs started from different points.
pub fn sam_continuity(seed: u64, n_samples: usize, grid: usize) -> Result<Vec<Check>> {
    let num = Numerics::default();
    let series = benchmark_series(seed, 100)?;
    let model: Arc<dyn SelectionModel> = Arc::new(HaploidModel::new(mutation()));
    let fz = FrozenLikelihood::build(&series, model, ParameterDomain::symmetric(1.0)?, n_samples, seed, &num)?;
    let mut values = Vec::with_capacity(grid);
    for i in 0..grid {
        let th = -1.0 + 2.0 * i as f64 / (grid - 1) as f64;
        values.push(fz.log_likelihood(&[th])?.log_value);
    }
    let finite = values.iter().all(|v| v.is_finite());
    let ratio = jump_ratio(&values);
    let f = |v: f64| fz.log_likelihood(&[v]).map_or(f64::NEG_INFINITY, |l| l.log_value);
    let mut hats = Vec::new();
    for x0 in [-0.8, -0.4, 0.0, 0.4, 0.8] {
        hats.push(brent_maximize_from(f, -1.0, 1.0, x0, 1e-9, 500)?.theta_hat[0]);
    }
    let spread = hats.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - hats.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(vec![
        Check::at_most(
            "frozen log-likelihood jump audit",
            if finite { ratio } else { f64::INFINITY },
            10.0,
            format!("{grid}-point grid on [-1, 1], N={n_samples}; largest step relative to its neighbours"),
        ),
        Check::at_most(
            "Brent from 5 starting points",
            spread,
            1e-6,
            format!("maximizers {hats:.8?}"),
        ),
    ])
}

/// Run the suite.
pub fn run(level: Level, seed: u64) -> Result<Vec<Check>> {
    let quick = level == Level::Quick;
    let mut out = Vec::new();
    out.extend(ancestral_exactness(if quick { 20_000 } else { 100_000 }, seed)?);
    out.extend(density_unbiasedness(if quick { 3 } else { 10 }, if quick { 2_000 } else { 10_000 }, seed)?);
    out.push(bridge_midpoint(if quick { 1_000 } else { 10_000 }, seed)?);
    out.push(unit_mass(if quick { 10_000 } else { 100_000 }, seed)?);
    out.push(neutral_reduction(seed)?);
    out.extend(sam_continuity(seed, if quick { 20 } else { 100 }, if quick { 50 } else { 200 })?);
    out.extend(coupled_factorization(seed, if quick { 20 } else { 100 }, if quick { 20 } else { 100 }, 1e-6)?);
    if !quick {
        out.extend(consistency_trend(seed, &[10, 100, 500], 1000, 50)?.2);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jump_ratio_flags_steps() {
        let smooth: Vec<f64> = (0..100).map(|i| (i as f64 / 10.0).sin()).collect();
        assert!(jump_ratio(&smooth) < 3.0);
        let mut step = smooth.clone();
        for v in &mut step[50..] {
            *v += 1.0;
        }
        assert!(jump_ratio(&step) > 10.0);
    }

    #[test]
    fn check_lines() {
        let c = Check::at_most("x", 1.0, 2.0, "d");
        assert!(c.passed && c.line().starts_with("PASS x"));
        assert!(!Check::at_least("y", 1.0, 2.0, "").passed);
    }
}
