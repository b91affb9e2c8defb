//! Frozen-randomness likelihood estimation.
//!
//! For each observed increment `x → y` over `t` and each independent block of
//! loci, `N` samples are drawn once: ancestral counts `M` per locus, Poisson
//! times at the dominating rate `ρ` and neutral bridge values at those times.
//! None of this depends on `ϑ`, so for fixed draws
//!
//! `L(ϑ) = exp{A(y) - A(x) - tφ⁻} (1/N) Σ_j p̂_j ∏_i [1 - (φ(ω_{ij}) - φ⁻)/ρ]`
//!
//! is continuous in `ϑ` and unbiased for the transition density under
//! selection at every `ϑ` in the domain.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ancestral::AncestralSampler;
use crate::coupled::joint_bridge_sample;
use crate::error::{Error, Result};
use crate::exactsim::{joint_states, sample_marked_poisson};
use crate::model::{Component, MutationRates, ParameterDomain, SelectionModel};
use crate::neutral::NeutralKernel;
use crate::numerics::Numerics;
use crate::rng::{Purpose, Streams};
use crate::series::ObservationSeries;

pub const CACHE_VERSION: u32 = 1;

/// Randomness for one Monte Carlo sample of one contribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDraw {
    /// Ancestral count per locus.
    pub m: Vec<usize>,
    pub times: Vec<f64>,
    /// `states[i]`: bridge state (one value per locus) at `times[i]`.
    pub states: Vec<Vec<f64>>,
    /// Neutral density estimate `∏_k p(M = m_k, x_k, y_k)`.
    pub density: f64,
    pub approx_points: usize,
}

/// Frozen draws for one increment restricted to one block of loci.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionDraws {
    pub increment: usize,
    pub loci: Vec<usize>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t: f64,
    pub rate: f64,
    pub samples: Vec<SampleDraw>,
}

impl ContributionDraws {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn poisson_points(&self) -> usize {
        self.samples.iter().map(|s| s.times.len()).sum()
    }

    pub fn approx_points(&self) -> usize {
        self.samples.iter().map(|s| s.approx_points).sum()
    }
}

/// Draw `n` frozen samples for the increment `x → y` over `t`. Sample `j`
/// uses the streams at `address ++ [j]`, one per purpose.
#[allow(clippy::too_many_arguments)]
pub fn draw_contribution(
    x: &[f64],
    y: &[f64],
    t: f64,
    kernel: &NeutralKernel,
    m_sampler: &AncestralSampler,
    rate: f64,
    n: usize,
    streams: &Streams,
    address: &[u64],
    numerics: &Numerics,
) -> Result<ContributionDraws> {
    if n == 0 {
        return Err(Error::arg("need at least one Monte Carlo sample"));
    }
    if t < numerics.t_min && !numerics.approx_small_t {
        return Err(Error::TimeTooSmall {
            t,
            t_min: numerics.t_min,
        });
    }
    if m_sampler.t() != t {
        return Err(Error::arg("ancestral sampler prepared for a different time"));
    }
    let mut path = address.to_vec();
    path.push(0);
    let mut samples = Vec::with_capacity(n);
    for j in 0..n {
        *path.last_mut().unwrap() = j as u64;
        let mut rng_m = streams.stream(Purpose::Ancestral, &path);
        let mut m = Vec::with_capacity(x.len());
        let mut density = 1.0;
        for (&xk, &yk) in x.iter().zip(y) {
            let mk = m_sampler.sample(&mut rng_m)?;
            density *= kernel.density_given_m(mk, xk, yk)?;
            m.push(mk);
        }
        let mut rng_p = streams.stream(Purpose::Poisson, &path);
        let times = sample_marked_poisson(rate, t, false, &mut rng_p)?.times;
        let mut rng_b = streams.stream(Purpose::Bridge, &path);
        let bridges = joint_bridge_sample(x, y, t, &times, kernel, numerics, &mut rng_b)?;
        samples.push(SampleDraw {
            m,
            states: joint_states(&bridges),
            times,
            density,
            approx_points: bridges.iter().map(|b| b.approx_points).sum(),
        });
    }
    Ok(ContributionDraws {
        increment: address.first().copied().unwrap_or(0) as usize,
        loci: (0..x.len()).collect(),
        x: x.to_vec(),
        y: y.to_vec(),
        t,
        rate,
        samples,
    })
}

fn check_rate(draws: &ContributionDraws, model: &dyn SelectionModel, theta: &[f64]) -> Result<(f64, f64)> {
    let b = model.phi_bounds(theta);
    let spread = b.spread();
    if spread > draws.rate * (1.0 + 1e-12) {
        return Err(Error::OutsideDomain {
            theta: theta.to_vec(),
            rate: draws.rate,
            spread,
        });
    }
    Ok((b.lower, draws.rate))
}

fn sample_a(model: &dyn SelectionModel, theta: &[f64], s: &SampleDraw, phi_lo: f64, rate: f64) -> f64 {
    let mut a = 1.0;
    for w in &s.states {
        let f = 1.0 - (model.phi(w, theta) - phi_lo) / rate;
        a *= f.clamp(0.0, 1.0);
    }
    a
}

/// Per-sample values `p̂_j a_j` (without the endpoint factor).
pub fn sample_values(draws: &ContributionDraws, model: &dyn SelectionModel, theta: &[f64]) -> Result<Vec<f64>> {
    let (lo, rate) = check_rate(draws, model, theta)?;
    Ok(draws
        .samples
        .iter()
        .map(|s| s.density * sample_a(model, theta, s, lo, rate))
        .collect())
}

/// Average over samples of `∏_i [1 - (φ(ω_i) - φ⁻)/ρ]`.
pub fn a_estimate(draws: &ContributionDraws, model: &dyn SelectionModel, theta: &[f64]) -> Result<f64> {
    let (lo, rate) = check_rate(draws, model, theta)?;
    let sum: f64 = draws
        .samples
        .iter()
        .map(|s| sample_a(model, theta, s, lo, rate))
        .sum();
    Ok(sum / draws.len() as f64)
}

/// `exp{A(y) - A(x) - tφ⁻}`.
pub fn endpoint_factor(draws: &ContributionDraws, model: &dyn SelectionModel, theta: &[f64]) -> f64 {
    let lo = model.phi_bounds(theta).lower;
    (model.potential(&draws.y, theta) - model.potential(&draws.x, theta) - draws.t * lo).exp()
}

fn weighted_mean(values: &[f64], weights: Option<&[u32]>) -> f64 {
    match weights {
        None => values.iter().sum::<f64>() / values.len() as f64,
        Some(w) => {
            let mut acc = 0.0;
            let mut n = 0u64;
            for (v, &c) in values.iter().zip(w) {
                if c > 0 {
                    acc += c as f64 * v;
                    n += c as u64;
                }
            }
            acc / n as f64
        }
    }
}

/// Unbiased estimate of the transition density under selection.
pub fn contribution_estimate(
    draws: &ContributionDraws,
    model: &dyn SelectionModel,
    theta: &[f64],
) -> Result<f64> {
    contribution_weighted(draws, model, theta, None)
}

/// As [`contribution_estimate`] with integer multiplicities per sample.
pub fn contribution_weighted(
    draws: &ContributionDraws,
    model: &dyn SelectionModel,
    theta: &[f64],
    weights: Option<&[u32]>,
) -> Result<f64> {
    let values = sample_values(draws, model, theta)?;
    Ok(endpoint_factor(draws, model, theta) * weighted_mean(&values, weights))
}

/// Log-likelihood at one parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodEstimate {
    pub theta: Vec<f64>,
    pub log_value: f64,
    /// Log of each increment's contribution.
    pub log_contributions: Vec<f64>,
    /// Increments whose estimate is exactly zero.
    pub zero_contributions: Vec<usize>,
}

impl LikelihoodEstimate {
    pub fn is_finite(&self) -> bool {
        self.zero_contributions.is_empty()
    }
}

/// Sum of log contributions over draws in the given order, all evaluated
/// with the same model and parameter.
pub fn log_likelihood(
    draws: &[ContributionDraws],
    model: &dyn SelectionModel,
    theta: &[f64],
) -> Result<LikelihoodEstimate> {
    let mut log_contributions = Vec::with_capacity(draws.len());
    let mut zero = Vec::new();
    for (i, d) in draws.iter().enumerate() {
        let c = contribution_estimate(d, model, theta)?;
        if c <= 0.0 {
            zero.push(i);
        }
        log_contributions.push(c.ln());
    }
    let log_value = log_contributions.iter().sum();
    Ok(LikelihoodEstimate {
        theta: theta.to_vec(),
        log_value,
        log_contributions,
        zero_contributions: zero,
    })
}

/// Resampling weights for bootstrap evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    /// Multiplicity of each Monte Carlo sample, per draw record.
    Samples(Vec<Vec<u32>>),
    /// Multiplicity of each increment.
    Increments(Vec<u32>),
}

/// Header of the draw cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub version: u32,
    pub seed: u64,
    #[serde(rename = "N")]
    pub n_samples: usize,
    /// Dominating rate of each block of loci.
    pub rho: Vec<f64>,
    pub theta_a: f64,
    #[serde(rename = "theta_A")]
    pub theta_big: f64,
    #[serde(rename = "L")]
    pub loci: usize,
    pub domain_lower: Vec<f64>,
    pub domain_upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheFile {
    header: CacheHeader,
    records: Vec<ContributionDraws>,
}

/// All frozen draws for a series, organized by increment and block of loci.
#[derive(Debug, Clone)]
pub struct FrozenLikelihood {
    model: Arc<dyn SelectionModel>,
    domain: ParameterDomain,
    components: Vec<Component>,
    /// Record for increment `i`, block `c` at `i * components.len() + c`.
    records: Vec<ContributionDraws>,
    seed: u64,
    n_samples: usize,
    increments: usize,
}

impl FrozenLikelihood {
    /// Draw everything for `series`. Streams are addressed by
    /// `(increment, first locus of the block, sample)`, so results do not
    /// depend on the number of threads.
    pub fn build(
        series: &ObservationSeries,
        model: Arc<dyn SelectionModel>,
        domain: ParameterDomain,
        n_samples: usize,
        seed: u64,
        numerics: &Numerics,
    ) -> Result<Self> {
        let labels: Vec<usize> = (0..model.loci()).collect();
        Self::build_labelled(series, model, domain, n_samples, seed, numerics, &labels)
    }

    /// As [`Self::build`], but locus `k` of the model draws from the streams
    /// of locus `labels[k]`. A single-locus model fitted to column `k` of a
    /// multilocus series with `labels = [k]` reuses exactly the draws of that
    /// locus in the multilocus fit when the loci are unlinked.
    pub fn build_labelled(
        series: &ObservationSeries,
        model: Arc<dyn SelectionModel>,
        domain: ParameterDomain,
        n_samples: usize,
        seed: u64,
        numerics: &Numerics,
        labels: &[usize],
    ) -> Result<Self> {
        series.validate()?;
        if labels.len() != model.loci() {
            return Err(Error::arg("one stream label per locus is required"));
        }
        if series.loci() != model.loci() {
            return Err(Error::arg(format!(
                "series has {} loci but the model has {}",
                series.loci(),
                model.loci()
            )));
        }
        if domain.dim() != model.n_params() {
            return Err(Error::InvalidDomain(format!(
                "domain has dimension {} but the model has {} parameters",
                domain.dim(),
                model.n_params()
            )));
        }
        if n_samples == 0 {
            return Err(Error::arg("need at least one Monte Carlo sample"));
        }
        let components = model.components(&domain);
        let mutation = model.mutation();
        let kernel = NeutralKernel::new(mutation);
        let mut samplers: HashMap<u64, Arc<AncestralSampler>> = HashMap::new();
        for i in 0..series.increments() {
            let t = series.gap(i);
            if t < numerics.t_min && !numerics.approx_small_t {
                return Err(Error::TimeTooSmall {
                    t,
                    t_min: numerics.t_min,
                });
            }
            if let std::collections::hash_map::Entry::Vacant(e) = samplers.entry(t.to_bits()) {
                e.insert(Arc::new(AncestralSampler::new(t, mutation.theta(), numerics)?));
            }
        }
        let rates: Vec<f64> = components.iter().map(|c| c.model.sam_rate(&c.domain)).collect();
        let jobs: Vec<(usize, usize)> = (0..series.increments())
            .flat_map(|i| (0..components.len()).map(move |c| (i, c)))
            .collect();
        let streams = Streams::new(seed);
        let records: Vec<ContributionDraws> = jobs
            .par_iter()
            .map(|&(i, c)| {
                let comp = &components[c];
                let x = comp.project_state(&series.values[i]);
                let y = comp.project_state(&series.values[i + 1]);
                let t = series.gap(i);
                let sampler = &samplers[&t.to_bits()];
                let mut d = draw_contribution(
                    &x,
                    &y,
                    t,
                    &kernel,
                    sampler,
                    rates[c],
                    n_samples,
                    &streams,
                    &[i as u64, labels[comp.loci[0]] as u64],
                    numerics,
                )?;
                d.loci = comp.loci.clone();
                Ok(d)
            })
            .collect::<Result<_>>()?;
        Ok(FrozenLikelihood {
            model,
            domain,
            components,
            records,
            seed,
            n_samples,
            increments: series.increments(),
        })
    }

    pub fn model(&self) -> &Arc<dyn SelectionModel> {
        &self.model
    }

    pub fn domain(&self) -> &ParameterDomain {
        &self.domain
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn records(&self) -> &[ContributionDraws] {
        &self.records
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn increments(&self) -> usize {
        self.increments
    }

    /// Draw records of one increment, one per block of loci.
    pub fn increment_records(&self, i: usize) -> &[ContributionDraws] {
        let c = self.components.len();
        &self.records[i * c..(i + 1) * c]
    }

    /// Stored floating-point values, as a memory-use indicator.
    pub fn stored_values(&self) -> usize {
        self.records
            .iter()
            .flat_map(|r| &r.samples)
            .map(|s| 1 + s.m.len() + s.times.len() * (1 + s.m.len()))
            .sum()
    }

    pub fn approx_points(&self) -> usize {
        self.records.iter().map(|r| r.approx_points()).sum()
    }

    /// Estimated likelihood contribution of increment `i` (product over blocks).
    pub fn contribution(&self, i: usize, theta: &[f64]) -> Result<f64> {
        self.check(theta)?;
        let mut v = 1.0;
        for (c, rec) in self.components.iter().zip(self.increment_records(i)) {
            v *= contribution_estimate(rec, c.model.as_ref(), &c.project_params(theta))?;
        }
        Ok(v)
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.domain.dim() || !self.domain.contains(theta) {
            return Err(Error::OutsideDomain {
                theta: theta.to_vec(),
                rate: self.records.first().map_or(0.0, |r| r.rate),
                spread: self.model.phi_bounds(theta).spread(),
            });
        }
        Ok(())
    }

    pub fn log_likelihood(&self, theta: &[f64]) -> Result<LikelihoodEstimate> {
        self.log_likelihood_weighted(theta, None)
    }

    /// Log-likelihood with optional bootstrap weights. Increments are
    /// accumulated in index order.
    pub fn log_likelihood_weighted(&self, theta: &[f64], weights: Option<&Weights>) -> Result<LikelihoodEstimate> {
        self.check(theta)?;
        let nc = self.components.len();
        let params: Vec<Vec<f64>> = self.components.iter().map(|c| c.project_params(theta)).collect();
        let mut log_contributions = Vec::with_capacity(self.increments);
        let mut zero = Vec::new();
        for i in 0..self.increments {
            let mut lc = 0.0;
            for c in 0..nc {
                let idx = i * nc + c;
                let w = match weights {
                    Some(Weights::Samples(ws)) => Some(ws[idx].as_slice()),
                    _ => None,
                };
                let comp = &self.components[c];
                let v = contribution_weighted(&self.records[idx], comp.model.as_ref(), &params[c], w)?;
                lc += v.ln();
            }
            if lc == f64::NEG_INFINITY {
                zero.push(i);
            }
            log_contributions.push(lc);
        }
        let log_value = match weights {
            Some(Weights::Increments(mult)) => log_contributions
                .iter()
                .zip(mult)
                .filter(|(_, &m)| m > 0)
                .map(|(l, &m)| m as f64 * l)
                .sum(),
            _ => log_contributions.iter().sum(),
        };
        Ok(LikelihoodEstimate {
            theta: theta.to_vec(),
            log_value,
            log_contributions,
            zero_contributions: zero,
        })
    }

    /// True when every record was drawn for the corresponding increment of
    /// `series` (same endpoints and gap).
    pub fn matches_series(&self, series: &ObservationSeries) -> bool {
        if series.increments() != self.increments || series.loci() != self.model.loci() {
            return false;
        }
        let nc = self.components.len();
        self.records.iter().enumerate().all(|(k, rec)| {
            let (i, comp) = (k / nc, &self.components[k % nc]);
            rec.t == series.gap(i)
                && rec.x == comp.project_state(&series.values[i])
                && rec.y == comp.project_state(&series.values[i + 1])
        })
    }

    pub fn header(&self) -> CacheHeader {
        let mu = self.model.mutation();
        CacheHeader {
            version: CACHE_VERSION,
            seed: self.seed,
            n_samples: self.n_samples,
            rho: self.records[..self.components.len()].iter().map(|r| r.rate).collect(),
            theta_a: mu.theta_a(),
            theta_big: mu.theta_big(),
            loci: self.model.loci(),
            domain_lower: self.domain.lower().to_vec(),
            domain_upper: self.domain.upper().to_vec(),
        }
    }

    /// JSON cache of the header and every draw record.
    pub fn to_cache_json(&self) -> Result<String> {
        let file = CacheFile {
            header: self.header(),
            records: self.records.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    /// Restore frozen draws written by [`Self::to_cache_json`]; the header must
    /// agree with the model and domain supplied.
    pub fn from_cache_json(text: &str, model: Arc<dyn SelectionModel>, domain: ParameterDomain) -> Result<Self> {
        let file: CacheFile = serde_json::from_str(text)?;
        let h = &file.header;
        if h.version != CACHE_VERSION {
            return Err(Error::arg(format!("cache version {} is not supported", h.version)));
        }
        let mu = model.mutation();
        if MutationRates::new(h.theta_a, h.theta_big)? != mu
            || h.loci != model.loci()
            || h.domain_lower != domain.lower()
            || h.domain_upper != domain.upper()
        {
            return Err(Error::arg("cache was written for a different model or domain"));
        }
        let components = model.components(&domain);
        let nc = components.len();
        if nc == 0 || !file.records.len().is_multiple_of(nc) || h.rho.len() != nc {
            return Err(Error::arg("cache records do not match the model's blocks of loci"));
        }
        for (k, rec) in file.records.iter().enumerate() {
            let c = &components[k % nc];
            if rec.loci != c.loci || rec.increment != k / nc || rec.samples.len() != h.n_samples {
                return Err(Error::arg(format!("cache record {k} is inconsistent")));
            }
        }
        let increments = file.records.len() / nc;
        Ok(FrozenLikelihood {
            model,
            domain,
            components,
            records: file.records,
            seed: h.seed,
            n_samples: h.n_samples,
            increments,
        })
    }
}
