//! Exact simulation under selection by Poisson thinning of neutral proposals.
//!
//! A neutral path `ω` is accepted with probability
//! `exp{-∫(φ(ω_s) - φ⁻) ds}`, realized by a marked Poisson process of rate
//! `φ⁺ - φ⁻`: the path survives if every mark lies above the normalized
//! `g = (φ - φ⁻)/(φ⁺ - φ⁻)` at its time.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::ancestral::AncestralSampler;
use crate::bridge::BridgeSkeleton;
use crate::coupled::joint_bridge_sample;
use crate::error::{Error, Result};
use crate::model::SelectionModel;
use crate::neutral::{check_interior, NeutralKernel};
use crate::numerics::Numerics;
use crate::series::ObservationSeries;

/// Points of a homogeneous Poisson process on `(0, t)`, optionally marked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedPoissonSample {
    pub t: f64,
    pub rate: f64,
    pub times: Vec<f64>,
    pub marks: Option<Vec<f64>>,
}

impl MarkedPoissonSample {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Uniform on the open interval `(0, 1)`.
pub(crate) fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

pub fn sample_marked_poisson<R: Rng + ?Sized>(
    rate: f64,
    t: f64,
    with_marks: bool,
    rng: &mut R,
) -> Result<MarkedPoissonSample> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(Error::arg(format!("Poisson rate must be finite and >= 0, got {rate}")));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::arg(format!("Poisson horizon must be positive, got {t}")));
    }
    let mean = rate * t;
    let k = if mean > 0.0 {
        Poisson::new(mean).expect("positive mean").sample(rng) as usize
    } else {
        0
    };
    let mut times: Vec<f64> = (0..k).map(|_| open_unit(rng) * t).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // ties or products rounding onto t would break the skeleton ordering
    times.dedup();
    times.retain(|&s| s > 0.0 && s < t);
    let marks = with_marks.then(|| (0..times.len()).map(|_| open_unit(rng)).collect());
    Ok(MarkedPoissonSample {
        t,
        rate,
        times,
        marks,
    })
}

/// True iff every mark lies above `g(ω_{t_i})`, where `states[i]` is the
/// (per-locus) state at the `i`-th Poisson time.
pub fn acceptance_indicator(
    model: &dyn SelectionModel,
    theta: &[f64],
    states: &[Vec<f64>],
    marks: &[f64],
) -> Result<bool> {
    if states.len() != marks.len() {
        return Err(Error::arg(format!(
            "{} skeleton states but {} marks",
            states.len(),
            marks.len()
        )));
    }
    let b = model.phi_bounds(theta);
    let spread = b.spread();
    if !(spread > 0.0) {
        return Ok(true);
    }
    Ok(states
        .iter()
        .zip(marks)
        .all(|(x, &psi)| (model.phi(x, theta) - b.lower) / spread <= psi))
}

/// Transpose per-locus skeletons into per-time joint states.
pub fn joint_states(bridges: &[BridgeSkeleton]) -> Vec<Vec<f64>> {
    let k = bridges.first().map_or(0, |b| b.values.len());
    (0..k)
        .map(|i| bridges.iter().map(|b| b.values[i]).collect())
        .collect()
}

/// An accepted skeleton of the bridge under selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedPath {
    /// One skeleton per locus, all at the same times.
    pub loci: Vec<BridgeSkeleton>,
    /// Proposals drawn, including the accepted one.
    pub proposals: u64,
}

fn budget_error(numerics: &Numerics, what: &str) -> Error {
    Error::RejectionBudget {
        budget: numerics.rejection_budget,
        context: format!(
            "{what}: 0 of {} proposals accepted, empirical acceptance rate 0",
            numerics.rejection_budget
        ),
    }
}

/// Exact skeleton of the bridge from `x` to `y` over `[0, t]` under selection.
#[allow(clippy::too_many_arguments)]
pub fn sample_conditioned_path<R: Rng + ?Sized>(
    model: &dyn SelectionModel,
    theta: &[f64],
    x: &[f64],
    y: &[f64],
    t: f64,
    numerics: &Numerics,
    rng: &mut R,
) -> Result<ConditionedPath> {
    check_state(model, x)?;
    check_state(model, y)?;
    if t < numerics.t_min && !numerics.approx_small_t {
        return Err(Error::TimeTooSmall {
            t,
            t_min: numerics.t_min,
        });
    }
    let kernel = NeutralKernel::new(model.mutation());
    let rate = model.phi_bounds(theta).spread().max(0.0);
    for proposal in 1..=numerics.rejection_budget {
        let phi = sample_marked_poisson(rate, t, true, rng)?;
        let loci = joint_bridge_sample(x, y, t, &phi.times, &kernel, numerics, rng)?;
        let marks = phi.marks.as_deref().unwrap_or(&[]);
        if acceptance_indicator(model, theta, &joint_states(&loci), marks)? {
            return Ok(ConditionedPath {
                loci,
                proposals: proposal,
            });
        }
    }
    Err(budget_error(numerics, "conditioned bridge"))
}

fn check_state(model: &dyn SelectionModel, x: &[f64]) -> Result<()> {
    if x.len() != model.loci() {
        return Err(Error::arg(format!(
            "state has {} loci, model has {}",
            x.len(),
            model.loci()
        )));
    }
    x.iter().try_for_each(|&v| check_interior(v))
}

/// A simulated series with per-increment rejection statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPath {
    pub series: ObservationSeries,
    /// Proposals used for each increment.
    pub proposals: Vec<u64>,
    /// Bridge points drawn with a sub-`t_min` gap in accepted proposals.
    pub approx_points: usize,
}

/// Exact draw of the diffusion under selection at `times` (strictly
/// increasing, all after 0), started from `x0`. Each increment is simulated
/// separately and chained.
pub fn simulate_path<R: Rng + ?Sized>(
    model: &dyn SelectionModel,
    theta: &[f64],
    x0: &[f64],
    times: &[f64],
    numerics: &Numerics,
    rng: &mut R,
) -> Result<SimulatedPath> {
    check_state(model, x0)?;
    if times.is_empty() {
        return Err(Error::arg("need at least one observation time"));
    }
    let mut prev = 0.0;
    for &s in times {
        if !(s > prev) {
            return Err(Error::arg("observation times must increase strictly from 0"));
        }
        if s - prev < numerics.t_min && !numerics.approx_small_t {
            return Err(Error::TimeTooSmall {
                t: s - prev,
                t_min: numerics.t_min,
            });
        }
        prev = s;
    }
    let mutation = model.mutation();
    let kernel = NeutralKernel::new(mutation);
    let rate = model.phi_bounds(theta).spread().max(0.0);
    let a_max = model.potential_max(theta);

    let mut out_times = vec![0.0];
    let mut values = vec![x0.to_vec()];
    let mut proposals = Vec::with_capacity(times.len());
    let mut approx_points = 0;
    let mut cached: Option<(f64, AncestralSampler)> = None;
    let mut u = x0.to_vec();
    let mut t_prev = 0.0;
    for &s in times {
        let dt = s - t_prev;
        if cached.as_ref().is_none_or(|(g, _)| *g != dt) {
            cached = Some((dt, AncestralSampler::new(dt, mutation.theta(), numerics)?));
        }
        let sampler = &cached.as_ref().unwrap().1;
        let mut accepted = None;
        for proposal in 1..=numerics.rejection_budget {
            let phi = sample_marked_poisson(rate, dt, true, rng)?;
            let mut v = Vec::with_capacity(u.len());
            for &uk in &u {
                v.push(kernel.sample_transition_with(sampler, uk, rng)?.y);
            }
            let loci = joint_bridge_sample(&u, &v, dt, &phi.times, &kernel, numerics, rng)?;
            let marks = phi.marks.as_deref().unwrap_or(&[]);
            let keep = acceptance_indicator(model, theta, &joint_states(&loci), marks)?;
            let coin: f64 = rng.random();
            if keep && coin < (model.potential(&v, theta) - a_max).exp() {
                approx_points += loci.iter().map(|b| b.approx_points).sum::<usize>();
                accepted = Some((v, proposal));
                break;
            }
        }
        let (v, n) = accepted.ok_or_else(|| budget_error(numerics, "path increment"))?;
        proposals.push(n);
        out_times.push(s);
        values.push(v.clone());
        u = v;
        t_prev = s;
    }
    Ok(SimulatedPath {
        series: ObservationSeries {
            times: out_times,
            values,
        },
        proposals,
        approx_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HaploidModel, MutationRates};
    use crate::rng::{Purpose, Streams};
    use crate::stats::ks_statistic;

    fn haploid() -> HaploidModel {
        HaploidModel::new(MutationRates::new(0.02, 0.02).unwrap())
    }

    #[test]
    fn poisson_counts_and_times() {
        let mut rng = Streams::new(1).stream(Purpose::Selftest, &[0]);
        assert!(sample_marked_poisson(0.0, 3.0, true, &mut rng).unwrap().is_empty());
        let n = 100_000;
        let mut total = 0usize;
        let mut first = Vec::new();
        for _ in 0..n {
            let p = sample_marked_poisson(2.0, 1.0, true, &mut rng).unwrap();
            assert!(p.times.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(p.marks.as_ref().unwrap().len(), p.len());
            total += p.len();
            if p.len() == 1 {
                first.push(p.times[0]);
            }
        }
        let mean = total as f64 / n as f64;
        assert!((mean - 2.0).abs() < 3.0 * (2.0 / n as f64).sqrt(), "{mean}");
        // a single point given K = 1 is uniform
        let d = ks_statistic(&first, |x| x.clamp(0.0, 1.0));
        assert!(d < 1.63 / (first.len() as f64).sqrt(), "{d}");
    }

    #[test]
    fn indicator_cases() {
        let m = haploid();
        assert!(acceptance_indicator(&m, &[0.7], &[], &[]).unwrap());
        assert!(acceptance_indicator(&m, &[0.0], &[vec![0.5]], &[1e-12]).unwrap());
        // g(0.5) at ϑ = 0.7 is close to its maximum
        assert!(!acceptance_indicator(&m, &[0.7], &[vec![0.5]], &[0.01]).unwrap());
        assert!(acceptance_indicator(&m, &[0.7], &[vec![0.5]], &[0.999]).unwrap());
        assert!(acceptance_indicator(&m, &[0.7], &[vec![0.5]], &[]).is_err());
    }

    #[test]
    fn neutral_bridge_accepts_immediately() {
        let m = haploid();
        let num = Numerics::default();
        let mut rng = Streams::new(2).stream(Purpose::Selftest, &[0]);
        let p = sample_conditioned_path(&m, &[0.0], &[0.3], &[0.6], 1.0, &num, &mut rng).unwrap();
        assert_eq!(p.proposals, 1);
        assert!(p.loci[0].times.is_empty());
    }

    #[test]
    fn neutral_simulation_takes_one_proposal_per_step() {
        let m = haploid();
        let num = Numerics::default();
        let mut rng = Streams::new(3).stream(Purpose::Simulation, &[0]);
        let times: Vec<f64> = (1..=10).map(f64::from).collect();
        let p = simulate_path(&m, &[0.0], &[0.5], &times, &num, &mut rng).unwrap();
        assert!(p.proposals.iter().all(|&n| n == 1));
        assert_eq!(p.series.times.len(), 11);
    }

    #[test]
    fn simulation_is_reproducible_and_interior() {
        let m = haploid();
        let num = Numerics::default();
        let times: Vec<f64> = (1..=100).map(f64::from).collect();
        let run = |seed| {
            let mut rng = Streams::new(seed).stream(Purpose::Simulation, &[0]);
            simulate_path(&m, &[0.7], &[0.5], &times, &num, &mut rng).unwrap()
        };
        let a = run(11);
        assert_eq!(a, run(11));
        assert_ne!(a.series, run(12).series);
        assert!(a.series.validate().is_ok());
    }

    #[test]
    fn rejects_short_gaps() {
        let m = haploid();
        let num = Numerics::default();
        let mut rng = Streams::new(3).stream(Purpose::Simulation, &[0]);
        let e = simulate_path(&m, &[0.7], &[0.5], &[1.0, 1.01], &num, &mut rng).unwrap_err();
        assert!(matches!(e, Error::TimeTooSmall { .. }));
    }
}
