//! Neutral Wright-Fisher transition density and exact transition sampling.
//!
//! `p(x, y; t) = Σ_m q_m(t) Σ_l Bin(l; m, x) D(y; θ_a + l, θ_A + m - l)` where
//! `D` is a beta density. Given a draw of `M`, the inner sum is an unbiased
//! estimate of the density.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma};

use crate::ancestral::AncestralSampler;
use crate::error::{Error, Result};
use crate::model::MutationRates;
use crate::numerics::Numerics;
use crate::special::{log_sum_exp, LnGammaTable};

/// One exact draw from the neutral transition law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionDraw {
    pub m: usize,
    pub l: usize,
    pub y: f64,
}

/// Reject states on the boundary, where beta densities may be unbounded.
pub fn check_interior(value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::BoundaryState { value })
    }
}

/// A frequency in `[0, 1]` carried as `(ln z, ln(1 - z))`, so values within
/// rounding distance of 1 keep their distance to the boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogFreq {
    pub ln_p: f64,
    pub ln_q: f64,
}

impl LogFreq {
    pub fn new(z: f64) -> Self {
        LogFreq {
            ln_p: z.ln(),
            ln_q: (-z).ln_1p(),
        }
    }

    pub fn from_parts(ln_p: f64, ln_q: f64) -> Self {
        LogFreq { ln_p, ln_q }
    }

    pub fn value(&self) -> f64 {
        self.ln_p.exp()
    }
}

/// Mutation rates plus cached log-gamma values for the mixture weights.
#[derive(Debug, Clone)]
pub struct NeutralKernel {
    mutation: MutationRates,
    lg: LnGammaTable,
}

impl NeutralKernel {
    pub fn new(mutation: MutationRates) -> Self {
        NeutralKernel {
            mutation,
            lg: LnGammaTable::new(mutation),
        }
    }

    pub fn mutation(&self) -> MutationRates {
        self.mutation
    }

    pub fn table(&self) -> &LnGammaTable {
        &self.lg
    }

    /// `ln Bin(l; m, x)` for `x ∈ [0, 1]`.
    pub fn ln_binomial(&self, l: usize, m: usize, x: f64) -> f64 {
        self.ln_binomial_log(l, m, LogFreq::new(x))
    }

    pub fn ln_binomial_log(&self, l: usize, m: usize, x: LogFreq) -> f64 {
        let k = m - l;
        let a = if l == 0 { 0.0 } else { l as f64 * x.ln_p };
        let b = if k == 0 { 0.0 } else { k as f64 * x.ln_q };
        self.lg.ln_choose(m, l) + a + b
    }

    /// `ln p(M = m, x, y)`: log of the binomial-beta mixture given `m`.
    pub fn ln_density_given_m(&self, m: usize, x: f64, y: f64) -> Result<f64> {
        check_interior(y)?;
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::BoundaryState { value: x });
        }
        Ok(self.ln_density_given_m_log(m, LogFreq::new(x), LogFreq::new(y)))
    }

    /// As [`Self::ln_density_given_m`] for prevalidated log coordinates.
    pub fn ln_density_given_m_log(&self, m: usize, x: LogFreq, y: LogFreq) -> f64 {
        let terms: Vec<f64> = (0..=m)
            .map(|l| self.ln_binomial_log(l, m, x) + self.lg.beta_ln_pdf(l, m - l, y.ln_p, y.ln_q))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn density_given_m(&self, m: usize, x: f64, y: f64) -> Result<f64> {
        Ok(self.ln_density_given_m(m, x, y)?.exp())
    }

    /// Draw `(m, l, y)` using a prepared sampler for `M` at the desired time.
    pub fn sample_transition_with<R: Rng + ?Sized>(
        &self,
        sampler: &AncestralSampler,
        x: f64,
        rng: &mut R,
    ) -> Result<TransitionDraw> {
        let m = sampler.sample(rng)?;
        let l = sample_binomial(m, x, rng);
        let y = sample_beta(
            self.mutation.theta_a() + l as f64,
            self.mutation.theta_big() + (m - l) as f64,
            rng,
        );
        Ok(TransitionDraw { m, l, y })
    }
}

/// Binomial–beta mixture given `M = m`.
pub fn density_given_m(m: usize, x: f64, y: f64, mutation: MutationRates) -> Result<f64> {
    NeutralKernel::new(mutation).density_given_m(m, x, y)
}

/// Average of the mixture over draws of `M`: an unbiased estimate of `p(x, y; t)`.
pub fn transition_density_estimate(
    x: f64,
    y: f64,
    kernel: &NeutralKernel,
    m_draws: &[usize],
) -> Result<f64> {
    if m_draws.is_empty() {
        return Err(Error::arg("need at least one draw of M"));
    }
    let mut acc = 0.0;
    for &m in m_draws {
        acc += kernel.density_given_m(m, x, y)?;
    }
    Ok(acc / m_draws.len() as f64)
}

/// Deterministic `p(x, y; t)` from the bracketed `q_m(t)`; the neglected
/// mixture mass must be below `tol`.
pub fn transition_density_oracle(
    x: f64,
    y: f64,
    t: f64,
    kernel: &NeutralKernel,
    tol: f64,
    numerics: &Numerics,
) -> Result<f64> {
    let sampler = AncestralSampler::new(t, kernel.mutation().theta(), numerics)?;
    transition_density_from(&sampler, x, y, kernel, tol)
}

/// As [`transition_density_oracle`] with a prepared table for `q_m(t)`.
pub fn transition_density_from(
    sampler: &AncestralSampler,
    x: f64,
    y: f64,
    kernel: &NeutralKernel,
    tol: f64,
) -> Result<f64> {
    check_interior(y)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::BoundaryState { value: x });
    }
    transition_density_from_log(sampler, LogFreq::new(x), LogFreq::new(y), kernel, tol)
}

pub fn transition_density_from_log(
    sampler: &AncestralSampler,
    x: LogFreq,
    y: LogFreq,
    kernel: &NeutralKernel,
    tol: f64,
) -> Result<f64> {
    if sampler.tail_mass() > tol {
        return Err(Error::TruncationBudget {
            eps: tol,
            budget: sampler.support_len(),
        });
    }
    let mut acc = 0.0;
    for m in 0..sampler.support_len() {
        let q = sampler.q(m);
        if q > 0.0 {
            acc += q * kernel.ln_density_given_m_log(m, x, y).exp();
        }
    }
    Ok(acc)
}

/// Exact draw from `p(x, ·; t)`.
pub fn sample_transition<R: Rng + ?Sized>(
    x: f64,
    t: f64,
    kernel: &NeutralKernel,
    numerics: &Numerics,
    rng: &mut R,
) -> Result<TransitionDraw> {
    let sampler = AncestralSampler::new(t, kernel.mutation().theta(), numerics)?;
    kernel.sample_transition_with(&sampler, x, rng)
}

pub fn sample_binomial<R: Rng + ?Sized>(m: usize, x: f64, rng: &mut R) -> usize {
    if m == 0 || x <= 0.0 {
        return 0;
    }
    if x >= 1.0 {
        return m;
    }
    Binomial::new(m as u64, x)
        .expect("valid binomial parameters")
        .sample(rng) as usize
}

/// `ln G` for `G ~ Gamma(shape, 1)`, accurate for tiny shapes via
/// `G = G' U^{1/shape}` with `G' ~ Gamma(shape + 1, 1)`.
fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        return Gamma::new(shape, 1.0)
            .expect("positive shape")
            .sample(rng)
            .ln();
    }
    let g: f64 = Gamma::new(shape + 1.0, 1.0)
        .expect("positive shape")
        .sample(rng);
    let u: f64 = 1.0 - rng.random::<f64>();
    g.ln() + u.ln() / shape
}

/// Beta(a, b) variate as a ratio of gamma variates, computed in log space so
/// small shape parameters do not round the draw onto the boundary. The result
/// is kept strictly inside `(0, 1)`.
pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let la = ln_gamma_variate(a, rng);
    let lb = ln_gamma_variate(b, rng);
    let y = 1.0 / (1.0 + (lb - la).exp());
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}
