//! The death-process mixing law `q_m(t)` of the neutral transition density.
//!
//! `q_m(t) = Σ_{k≥m} (-1)^{k-m} b_k(m)` with
//! `b_k(m) = (θ+2k-1)/(m!(k-m)!) · Γ(θ+m+k-1)/Γ(θ+m) · e^{-k(k+θ-1)t/2}`.
//! Terms can reach ~1e12 before decaying at small `t`, so partial sums are
//! carried in double-double arithmetic. Once the terms decrease, consecutive
//! partial sums bracket the limit, which is what exact sampling needs.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::numerics::Numerics;
use crate::special::ln_factorial;

/// Final bracket width below which a row of brackets counts as converged.
const ROW_TOL: f64 = 1e-18;
/// Rows whose terms are all below `e^{-700}` are treated as zero mass.
const NEGLIGIBLE_LOG: f64 = -700.0;
/// Certified mass left beyond the last precomputed row of a sampler.
const SAMPLER_TAIL: f64 = 1e-20;
/// Widest final cumulative bracket at which an undecided uniform is redrawn.
pub const TIE_ZONE: f64 = 1e-13;

/// `ln b_k(m)`; `None` when `k < m`. The gamma ratio is expanded as the
/// product `(θ+m)(θ+m+1)⋯(θ+m+k-2)`, and `b_0(0) = 1`.
pub fn log_b(m: usize, k: usize, t: f64, theta: f64) -> Option<f64> {
    if k < m {
        return None;
    }
    if k == 0 {
        return Some(0.0);
    }
    let kf = k as f64;
    let mut v = (theta + 2.0 * kf - 1.0).ln() - ln_factorial(m) - ln_factorial(k - m);
    for i in 0..k - 1 {
        v += (theta + (m + i) as f64).ln();
    }
    v -= kf * (kf + theta - 1.0) * t / 2.0;
    Some(v)
}

/// `ln b_m(m) = ln Γ(θ+2m) - ln Γ(θ+m) - ln m! - m(m+θ-1)t/2`.
pub(crate) fn log_b_diag(m: usize, t: f64, theta: f64) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let mf = m as f64;
    ln_gamma(theta + 2.0 * mf) - ln_gamma(theta + mf) - ln_factorial(m)
        - mf * (mf + theta - 1.0) * t / 2.0
}

/// `ln(b_{k+1}(m) / b_k(m))`.
fn ln_ratio(m: usize, k: usize, t: f64, theta: f64) -> f64 {
    if k == 0 {
        return (theta + 1.0).ln() - theta * t / 2.0;
    }
    let (kf, mf) = (k as f64, m as f64);
    ((theta + 2.0 * kf + 1.0) / (theta + 2.0 * kf - 1.0)).ln()
        + ((theta + mf + kf - 1.0) / (kf + 1.0 - mf)).ln()
        - (2.0 * kf + theta) * t / 2.0
}

/// Upper bound on `ln_ratio(m, j, ..)` for every `j ≥ k ≥ 1`.
fn ln_ratio_bound(m: usize, k: usize, t: f64, theta: f64) -> f64 {
    let (kf, mf) = (k as f64, m as f64);
    2.0 / (theta + 2.0 * kf - 1.0) + (theta + 2.0 * mf - 1.0).max(1.0).ln()
        - (2.0 * kf + theta) * t / 2.0
}

/// First index `K₀(m) ≥ m` from which `k ↦ b_k(m)` is strictly decreasing.
pub fn decreasing_index(m: usize, t: f64, theta: f64, budget: usize) -> Result<usize> {
    let mut last_up: Option<usize> = None;
    let mut k = m;
    loop {
        if k >= 1 && ln_ratio_bound(m, k, t, theta) < 0.0 {
            break;
        }
        if ln_ratio(m, k, t, theta) >= -1e-12 {
            last_up = Some(k);
        }
        k += 1;
        if k - m > budget {
            return Err(Error::NonConvergence { m, t, budget });
        }
    }
    Ok(last_up.map_or(m, |k| k + 1))
}

/// Incremental evaluation of one alternating series `q_m(t)`.
#[derive(Debug, Clone)]
pub struct AncestralSeries {
    m: usize,
    t: f64,
    theta: f64,
    budget: usize,
    k0: usize,
    /// Index of the last term included in `sum`.
    k: usize,
    sum: Dd,
    /// Magnitude of term `k + 1`.
    next: Dd,
    /// `e^{-(2k+θ)t/2}`, the exponential part of `b_{k+1}/b_k`.
    decay: Dd,
    step: Dd,
    max_term: f64,
    /// Set when every term is below `e^{-700}`: then `q_m` is at most this.
    negligible: Option<f64>,
}

impl AncestralSeries {
    pub fn new(m: usize, t: f64, theta: f64, budget: usize) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) || !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::arg(format!(
                "series needs t > 0 and theta > 0 (t={t}, theta={theta})"
            )));
        }
        let k0 = decreasing_index(m, t, theta, budget)?;
        let mut series = AncestralSeries {
            m,
            t,
            theta,
            budget,
            k0,
            k: m,
            sum: Dd::ZERO,
            next: Dd::ZERO,
            decay: Dd::ZERO,
            step: (-Dd::new(t)).exp(),
            max_term: 0.0,
            negligible: None,
        };
        let lb = log_b_diag(m, t, theta);
        if lb < NEGLIGIBLE_LOG {
            let mut max_log = lb;
            for k in m + 1..=k0 {
                max_log = max_log.max(log_b(m, k, t, theta).unwrap_or(f64::NEG_INFINITY));
            }
            if max_log < NEGLIGIBLE_LOG {
                series.negligible = Some((k0 - m + 1) as f64 * max_log.exp());
                return Ok(series);
            }
        }
        let mut base = Dd::ONE;
        for i in 1..=m {
            base = base * Dd::sum(theta, (m + i - 1) as f64) / Dd::new(i as f64);
        }
        let mf = m as f64;
        let half_t = Dd::new(t) * Dd::new(0.5);
        let arg = -(Dd::new(mf) * Dd::sum(mf - 1.0, theta) * half_t);
        let b = base * arg.exp();
        series.sum = b;
        series.max_term = b.hi.abs();
        series.decay = (-(Dd::sum(2.0 * mf, theta) * half_t)).exp();
        series.next = b * series.ratio(m);
        series.max_term = series.max_term.max(series.next.hi.abs());
        Ok(series)
    }

    /// `b_{k+1}/b_k` using the current `decay` (which must equal `E_k`).
    fn ratio(&self, k: usize) -> Dd {
        if k == 0 {
            return Dd::sum(self.theta, 1.0) * self.decay;
        }
        let kf = k as f64;
        Dd::sum(self.theta, 2.0 * kf + 1.0) / Dd::sum(self.theta, 2.0 * kf - 1.0)
            * Dd::sum(self.theta, (self.m + k) as f64 - 1.0)
            / Dd::new(kf + 1.0 - self.m as f64)
            * self.decay
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// `K₀(m)`
    pub fn decreasing_from(&self) -> usize {
        self.k0
    }

    /// Index of the last term in the current partial sum.
    pub fn index(&self) -> usize {
        self.k
    }

    pub fn partial_sum(&self) -> f64 {
        self.sum.to_f64()
    }

    fn sign(&self, k: usize) -> f64 {
        if (k - self.m).is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }

    /// Add one more term.
    pub fn advance(&mut self) -> Result<()> {
        if self.negligible.is_some() {
            return Ok(());
        }
        if self.k - self.m >= self.budget {
            return Err(Error::NonConvergence {
                m: self.m,
                t: self.t,
                budget: self.budget,
            });
        }
        self.k += 1;
        self.sum = self.sum + self.next * Dd::new(self.sign(self.k));
        self.decay = self.decay * self.step;
        self.next = self.next * self.ratio(self.k);
        self.max_term = self.max_term.max(self.next.hi.abs());
        Ok(())
    }

    /// Magnitude of the first omitted term.
    pub fn next_term(&self) -> f64 {
        self.next.to_f64()
    }

    /// Interval certainly containing `q_m(t)`, once the terms are decreasing.
    pub fn bracket(&self) -> Option<(f64, f64)> {
        if let Some(bound) = self.negligible {
            return Some((0.0, bound.min(1.0)));
        }
        if self.k + 1 < self.k0 {
            return None;
        }
        let other = self.sum + self.next * Dd::new(self.sign(self.k + 1));
        let (lo, hi) = if other < self.sum {
            (other, self.sum)
        } else {
            (self.sum, other)
        };
        let slack = 1e-30 * self.max_term * (self.k - self.m + 2) as f64 + f64::MIN_POSITIVE;
        let lo = lo.to_f64();
        let hi = hi.to_f64();
        let lo = lo - lo.abs() * 2.3e-16 - slack;
        let hi = hi + hi.abs() * 2.3e-16 + slack;
        Some((lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0)))
    }

    /// Refine until the bracket is narrower than `tol` (or the terms vanish).
    pub fn refine_to(&mut self, tol: f64) -> Result<(f64, f64)> {
        loop {
            if let Some((lo, hi)) = self.bracket() {
                if hi - lo < tol || self.negligible.is_some() || self.next.hi == 0.0 {
                    return Ok((lo, hi));
                }
            }
            self.advance()?;
        }
    }
}

/// `q_m(t)` to within `tol`, clamped to `[0, 1]`.
pub fn q_pmf_oracle(m: usize, t: f64, theta: f64, tol: f64, numerics: &Numerics) -> Result<f64> {
    if t < numerics.t_min {
        return Err(Error::TimeTooSmall {
            t,
            t_min: numerics.t_min,
        });
    }
    let mut s = AncestralSeries::new(m, t, theta, numerics.term_budget)?;
    let (lo, hi) = s.refine_to(tol)?;
    Ok((0.5 * (lo + hi)).clamp(0.0, 1.0))
}

/// Certified bound on `Σ_{m>last} q_m(t)`, available once every index past
/// `last` has decreasing terms from its first one, so `q_m ≤ b_m(m)`.
pub fn tail_bound(last: usize, t: f64, theta: f64) -> Option<f64> {
    let m1 = last + 1;
    let mf = m1 as f64;
    if theta + 2.0 * mf - 1.0 <= 2.0 / t || ln_ratio_bound(m1, m1, t, theta) >= 0.0 {
        return None;
    }
    let ratio = diag_ratio_bound(m1, t, theta);
    if ratio >= 1.0 {
        return None;
    }
    Some(log_b_diag(m1, t, theta).exp() / (1.0 - ratio))
}

/// Bound on `b_{j+1}(j+1) / b_j(j)` valid for every `j ≥ m`.
pub(crate) fn diag_ratio_bound(m: usize, t: f64, theta: f64) -> f64 {
    let mf = m as f64;
    2.0 * (2.0 + (theta - 1.0).max(0.0) / (mf + 1.0)) * (-(2.0 * mf + theta) * t / 2.0).exp()
}

/// Gaussian approximation to the law of `M` for small `t`. Not exact; only
/// used when explicitly requested or for sub-threshold internal gaps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxM {
    pub mean: f64,
    pub sd: f64,
}

impl ApproxM {
    pub fn new(t: f64, theta: f64) -> Self {
        let beta = (theta - 1.0) * t / 2.0;
        if beta.abs() < 1e-6 {
            return ApproxM {
                mean: 2.0 / t,
                sd: (2.0 / (3.0 * t)).sqrt(),
            };
        }
        let eta = beta / beta.exp_m1();
        let mean = 2.0 * eta / t;
        let var = mean * (eta + beta).powi(2) * (1.0 + eta / (eta + beta) - 2.0 * eta) / (beta * beta);
        ApproxM {
            mean,
            sd: var.max(0.0).sqrt(),
        }
    }

    fn cdf(&self, x: f64) -> f64 {
        if self.sd == 0.0 {
            return if x >= self.mean { 1.0 } else { 0.0 };
        }
        0.5 * erfc(-(x - self.mean) / (self.sd * std::f64::consts::SQRT_2))
    }

    /// Mass of the rounded normal at `m` (everything below 0.5 goes to 0).
    pub fn pmf(&self, m: usize) -> f64 {
        let mf = m as f64;
        let lo = if m == 0 { 0.0 } else { self.cdf(mf - 0.5) };
        (self.cdf(mf + 0.5) - lo).max(0.0)
    }

    /// `P(M > m)`
    pub fn tail(&self, m: usize) -> f64 {
        (1.0 - self.cdf(m as f64 + 0.5)).max(0.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let z = Normal::new(self.mean, self.sd.max(1e-300))
            .expect("finite normal parameters")
            .sample(rng);
        z.round().max(0.0) as usize
    }
}

/// Converged brackets for `q_m`, refined one term at a time.
fn build_row(m: usize, t: f64, theta: f64, budget: usize) -> Result<Vec<(f64, f64)>> {
    let mut s = AncestralSeries::new(m, t, theta, budget)?;
    while s.bracket().is_none() {
        s.advance()?;
    }
    let mut row = Vec::new();
    loop {
        let b = s.bracket().expect("bracket available past K0");
        row.push(b);
        if s.negligible.is_some() || s.next.hi.abs() < ROW_TOL {
            return Ok(row);
        }
        s.advance()?;
    }
}

/// Exact sampler and pmf table for `M` at a fixed `(t, θ)`.
///
/// Bracket rows are precomputed for every `m` until the certified tail mass
/// is below `1e-20`; rows past that are built on demand. The sampler only
/// reads the table, so it can be shared across threads.
#[derive(Debug, Clone)]
pub struct AncestralSampler {
    t: f64,
    theta: f64,
    budget: usize,
    rows: Vec<Vec<(f64, f64)>>,
    tail: f64,
    approx: Option<ApproxM>,
}

impl AncestralSampler {
    /// Fails with `TimeTooSmall` below `t_min` unless the approximation is enabled.
    pub fn new(t: f64, theta: f64, numerics: &Numerics) -> Result<Self> {
        if t < numerics.t_min {
            if numerics.approx_small_t {
                return Ok(Self::approximate(t, theta));
            }
            return Err(Error::TimeTooSmall {
                t,
                t_min: numerics.t_min,
            });
        }
        Self::exact(t, theta, numerics)
    }

    fn exact(t: f64, theta: f64, numerics: &Numerics) -> Result<Self> {
        let mut rows = Vec::new();
        let mut m = 0;
        let tail = loop {
            rows.push(build_row(m, t, theta, numerics.term_budget)?);
            if let Some(tb) = tail_bound(m, t, theta) {
                if tb < SAMPLER_TAIL {
                    break tb;
                }
            }
            m += 1;
            if m > numerics.m_budget {
                return Err(Error::TruncationBudget {
                    eps: SAMPLER_TAIL,
                    budget: numerics.m_budget,
                });
            }
        };
        Ok(AncestralSampler {
            t,
            theta,
            budget: numerics.term_budget,
            rows,
            tail,
            approx: None,
        })
    }

    /// Labelled small-time approximation (no exactness guarantee).
    pub fn approximate(t: f64, theta: f64) -> Self {
        let approx = ApproxM::new(t, theta);
        let mut len = (approx.mean + 12.0 * approx.sd).ceil() as usize + 2;
        while approx.tail(len - 1) > SAMPLER_TAIL {
            len += 1 + len / 8;
        }
        AncestralSampler {
            t,
            theta,
            budget: 0,
            rows: (0..len).map(|m| vec![(approx.pmf(m), approx.pmf(m))]).collect(),
            tail: approx.tail(len - 1),
            approx: Some(approx),
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn is_exact(&self) -> bool {
        self.approx.is_none()
    }

    /// Number of indices with stored values; the rest carry mass `≤ tail_mass()`.
    pub fn support_len(&self) -> usize {
        self.rows.len()
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail
    }

    /// Best point value of `q_m`.
    pub fn q(&self, m: usize) -> f64 {
        match self.rows.get(m).and_then(|r| r.last()) {
            Some(&(lo, hi)) => 0.5 * (lo + hi),
            None => 0.0,
        }
    }

    /// Certified upper bound on `q_m`.
    pub fn q_upper(&self, m: usize) -> f64 {
        match self.rows.get(m).and_then(|r| r.last()) {
            Some(&(_, hi)) => hi,
            None => self.tail,
        }
    }

    /// Draw `M`. Exact mode inverts the cumulative distribution using only
    /// brackets, refining every candidate one term per round until the
    /// uniform is separated from the cumulative bracket.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        if let Some(a) = &self.approx {
            return Ok(a.sample(rng));
        }
        let mut extra: Vec<Vec<(f64, f64)>> = Vec::new();
        'draw: loop {
            let u: f64 = rng.random();
            let mut level: Vec<usize> = vec![0];
            let mut m = 0usize;
            loop {
                if m >= self.rows.len() + extra.len() {
                    extra.push(build_row(m, self.t, self.theta, self.budget)?);
                }
                let row = |i: usize| -> &Vec<(f64, f64)> {
                    if i < self.rows.len() {
                        &self.rows[i]
                    } else {
                        &extra[i - self.rows.len()]
                    }
                };
                let (mut lo, mut hi) = (0.0, 0.0);
                for (i, &l) in level.iter().enumerate() {
                    let (a, b) = row(i)[l];
                    lo += a;
                    hi += b;
                }
                let round = (m + 1) as f64 * 2.3e-16;
                lo -= lo * round;
                hi += hi * round;
                if hi < u {
                    m += 1;
                    level.push(0);
                    continue;
                }
                if lo > u {
                    return Ok(m);
                }
                let mut progressed = false;
                for (i, l) in level.iter_mut().enumerate() {
                    if *l + 1 < row(i).len() {
                        *l += 1;
                        progressed = true;
                    }
                }
                if !progressed {
                    debug_assert!(hi - lo <= TIE_ZONE);
                    continue 'draw;
                }
            }
        }
    }

    /// Every stored bracket level, for audits: `levels(m)[j]` is the bracket
    /// after `j` refinements.
    pub fn levels(&self, m: usize) -> Option<&[(f64, f64)]> {
        self.rows.get(m).map(|r| r.as_slice())
    }
}

/// One-off exact draw of `M`.
pub fn sample_m<R: Rng + ?Sized>(t: f64, theta: f64, numerics: &Numerics, rng: &mut R) -> Result<usize> {
    AncestralSampler::new(t, theta, numerics)?.sample(rng)
}
