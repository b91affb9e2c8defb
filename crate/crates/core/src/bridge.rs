//! Neutral Wright-Fisher bridge skeletons.
//!
//! A new point `z` between a sampled left value `u` (gap `s`) and a right
//! value `w` (gap `r`) has density proportional to `p(u,z;s) p(z,w;r)`. Both
//! factors are binomial-beta mixtures, so the product is a beta mixture over
//! `(i, j) = (l₁+l₂, k₁+k₂)`:
//!
//! `W(i,j) = B(a+i, b+j) Σ G₁(l₁,k₁) G₂(l₂,k₂)` with
//! `G₁ = q_{m₁}(s) Bin(l₁; m₁, u) / B(a+l₁, b+k₁)` and
//! `G₂ = q_{m₂}(r) C(m₂, l₂) D(w; a+l₂, b+k₂)`.
//!
//! The table is truncated so that the dropped mass is certified below
//! `bridge_eps` times the retained mass. When one gap is below `t_min` the
//! exact series is unusable; that side is proposed from the small-time
//! approximation and corrected by rejection against the other side, and the
//! point is counted as approximate.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::ancestral::{diag_ratio_bound, log_b_diag, AncestralSampler, ApproxM};
use crate::error::{Error, Result};
use crate::neutral::{check_interior, sample_beta, NeutralKernel};
use crate::numerics::Numerics;

/// Bridge values at interior times, between fixed endpoints `(0, x)` and `(t, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeSkeleton {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Points sampled with a gap below `t_min` (approximate law).
    pub approx_points: usize,
}

/// Bounds on `z ↦ p(z, w; r)` assembled from one mixture side.
struct SideBound {
    /// `tails[M] ≥ Σ_{m>M} q̄_m max_l D(w; ..)`.
    tails: Vec<f64>,
    /// `≥ sup_z p(z, w; r)`.
    dmax: f64,
}

/// Prepared mixture side `G₂` for a right value `w` and gap `r`.
struct RightSide {
    /// `(l₂, k₂, ln G₂)` for `m₂ ≤ M₂`.
    entries: Vec<(usize, usize, f64)>,
}

/// Crude but certified `ln max_l D(w; a+l, b+m-l) ≤ ln((n+1) 2^n / (w^{1-a} (1-w)^{1-b}))`, `n = m+a+b`.
fn ln_crude_max_d(m: usize, a: f64, b: f64, w: f64) -> f64 {
    let n = m as f64 + a + b;
    (n + 1.0).ln() + n * std::f64::consts::LN_2 - (1.0 - a) * w.ln() - (1.0 - b) * (-w).ln_1p()
}

pub struct BridgeSampler<'a> {
    kernel: &'a NeutralKernel,
    numerics: &'a Numerics,
}

impl<'a> BridgeSampler<'a> {
    pub fn new(kernel: &'a NeutralKernel, numerics: &'a Numerics) -> Self {
        BridgeSampler { kernel, numerics }
    }

    fn q_sampler(&self, gap: f64) -> Result<AncestralSampler> {
        let theta = self.kernel.mutation().theta();
        if gap < self.numerics.t_min {
            Ok(AncestralSampler::approximate(gap, theta))
        } else {
            AncestralSampler::new(gap, theta, self.numerics)
        }
    }

    fn ln_max_d(&self, m: usize, w: f64) -> f64 {
        let (ln_w, ln_1mw) = (w.ln(), (-w).ln_1p());
        (0..=m)
            .map(|l| self.kernel.table().beta_ln_pdf(l, m - l, ln_w, ln_1mw))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn side_bound(&self, q: &AncestralSampler, w: f64) -> SideBound {
        let mu = self.kernel.mutation();
        let (a, b) = (mu.theta_a(), mu.theta_big());
        let len = q.support_len();
        let ln_max_d: Vec<f64> = (0..len).map(|m| self.ln_max_d(m, w)).collect();
        let contrib: Vec<f64> = (0..len)
            .map(|m| q.q_upper(m) * ln_max_d[m].exp())
            .collect();
        // mass beyond the table: q̄_m ≤ tail, spread by the crude density bound
        let beyond = if q.is_exact() {
            // q̄_m ≤ b_m(m) past the table; exact density maxima until the
            // crude bound is negligible and decays geometrically
            let (t, theta) = (q.t(), mu.theta());
            let mut acc = 0.0;
            let mut m = len;
            loop {
                let lb = log_b_diag(m, t, theta);
                let crude = (lb + ln_crude_max_d(m, a, b, w)).exp();
                if diag_ratio_bound(m, t, theta) <= 0.2 && (crude < 1e-300 || crude < 1e-40 * acc) {
                    break acc + 2.0 * crude;
                }
                acc += (lb + self.ln_max_d(m, w)).exp();
                m += 1;
                if m > len + 100_000 {
                    break f64::INFINITY;
                }
            }
        } else {
            2.0 * q.tail_mass() * ln_max_d.last().map_or(1.0, |v| v.exp())
        };
        let mut tails = vec![0.0; len];
        let mut acc = beyond;
        for m in (0..len).rev() {
            tails[m] = acc;
            acc += contrib[m];
        }
        SideBound {
            tails,
            dmax: acc,
        }
    }

    fn right_side(&self, q: &AncestralSampler, w: f64, m_max: usize) -> RightSide {
        let lg = self.kernel.table();
        let (ln_w, ln_1mw) = (w.ln(), (-w).ln_1p());
        let mut entries = Vec::new();
        for m in 0..=m_max {
            let qm = q.q(m);
            if qm <= 0.0 {
                continue;
            }
            let lq = qm.ln();
            for l in 0..=m {
                let v = lq + lg.ln_choose(m, l) + lg.beta_ln_pdf(l, m - l, ln_w, ln_1mw);
                entries.push((l, m - l, v));
            }
        }
        RightSide { entries }
    }

    /// One point between `u` (gap `s` on the left) and `w` (gap `r` on the right).
    /// Returns the value and whether an approximate law was involved.
    pub fn sample_point<R: Rng + ?Sized>(
        &self,
        u: f64,
        w: f64,
        s: f64,
        r: f64,
        rng: &mut R,
    ) -> Result<(f64, bool)> {
        let t_min = self.numerics.t_min;
        if s >= t_min && r >= t_min {
            return Ok((self.sample_table(u, w, s, r, rng)?, false));
        }
        // the reversed bridge has the same law, so propose from the smaller gap
        let z = if s <= r {
            self.sample_rejection(u, w, s, r, rng)?
        } else {
            self.sample_rejection(w, u, r, s, rng)?
        };
        Ok((z, true))
    }

    fn sample_table<R: Rng + ?Sized>(&self, u: f64, w: f64, s: f64, r: f64, rng: &mut R) -> Result<f64> {
        let eps = self.numerics.bridge_eps;
        let qs = self.q_sampler(s)?;
        let qr = self.q_sampler(r)?;
        let bound = self.side_bound(&qr, w);
        // tails of the left side: Σ_{m>M} q̄_m(s)
        let ls = qs.support_len();
        let mut left_tails = vec![0.0; ls];
        let mut acc = qs.tail_mass();
        for m in (0..ls).rev() {
            left_tails[m] = acc;
            acc += qs.q_upper(m);
        }
        let mut target = 1.0;
        for _ in 0..8 {
            let m1 = (0..ls)
                .find(|&m| left_tails[m] * bound.dmax <= 0.5 * eps * target)
                .unwrap_or(ls - 1);
            let m2 = (0..bound.tails.len())
                .find(|&m| bound.tails[m] <= 0.5 * eps * target)
                .unwrap_or(bound.tails.len() - 1);
            let (weights, total) = self.mixture_table(&qs, &qr, u, w, m1, m2);
            let dropped = left_tails[m1] * bound.dmax + bound.tails[m2];
            if dropped <= eps * total {
                let (i, j) = pick(&weights, rng);
                let mu = self.kernel.mutation();
                return Ok(sample_beta(
                    mu.theta_a() + i as f64,
                    mu.theta_big() + j as f64,
                    rng,
                ));
            }
            if m1 == ls - 1 && m2 == bound.tails.len() - 1 {
                break;
            }
            target = (0.5 * total).min(0.5 * target);
        }
        Err(Error::TruncationBudget {
            eps,
            budget: ls.max(bound.tails.len()),
        })
    }

    /// Beta-mixture weights `W(i, j)` (linear, arbitrary common scale) and the
    /// unnormalized total in the scale of `p(u, w; s + r)`.
    fn mixture_table(
        &self,
        qs: &AncestralSampler,
        qr: &AncestralSampler,
        u: f64,
        w: f64,
        m1: usize,
        m2: usize,
    ) -> (Vec<(usize, usize, f64)>, f64) {
        let lg = self.kernel.table();
        let right = self.right_side(qr, w, m2);
        let mut left: Vec<(usize, usize, f64)> = Vec::new();
        for m in 0..=m1 {
            let qm = qs.q(m);
            if qm <= 0.0 {
                continue;
            }
            let lq = qm.ln();
            for l in 0..=m {
                let v = lq + self.kernel.ln_binomial(l, m, u) - lg.ln_beta(l, m - l);
                left.push((l, m - l, v));
            }
        }
        let dim = m1 + m2 + 1;
        let shift1 = left.iter().map(|e| e.2).fold(f64::NEG_INFINITY, f64::max);
        let shift2 = right.entries.iter().map(|e| e.2).fold(f64::NEG_INFINITY, f64::max);
        let mut conv = vec![0.0; dim * dim];
        let right_lin: Vec<(usize, usize, f64)> = right
            .entries
            .iter()
            .map(|&(l, k, v)| (l, k, (v - shift2).exp()))
            .filter(|e| e.2 > 0.0)
            .collect();
        for &(l1, k1, v1) in &left {
            let g1 = (v1 - shift1).exp();
            if g1 == 0.0 {
                continue;
            }
            for &(l2, k2, g2) in &right_lin {
                conv[(l1 + l2) * dim + k1 + k2] += g1 * g2;
            }
        }
        let mut logw = Vec::new();
        for i in 0..dim {
            for j in 0..dim - i {
                let c = conv[i * dim + j];
                if c > 0.0 {
                    logw.push((i, j, c.ln() + lg.ln_beta(i, j)));
                }
            }
        }
        let shift = logw.iter().map(|e| e.2).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let weights: Vec<(usize, usize, f64)> = logw
            .into_iter()
            .map(|(i, j, v)| {
                let x = (v - shift).exp();
                total += x;
                (i, j, x)
            })
            .collect();
        let scale = (shift + shift1 + shift2).exp();
        (weights, total * scale)
    }

    /// Propose the left block from the (small-gap) side `s`, accept with
    /// probability `h / H` where `h = ∫ D(z; a+l₁, b+k₁) p(z, w; r) dz`.
    fn sample_rejection<R: Rng + ?Sized>(&self, u: f64, w: f64, s: f64, r: f64, rng: &mut R) -> Result<f64> {
        let eps = self.numerics.bridge_eps;
        let lg = self.kernel.table();
        let mu = self.kernel.mutation();
        let theta = mu.theta();
        let exact_s = if s >= self.numerics.t_min {
            Some(AncestralSampler::new(s, theta, self.numerics)?)
        } else {
            None
        };
        let approx_s = ApproxM::new(s, theta);
        let qr = self.q_sampler(r)?;
        let bound = self.side_bound(&qr, w);
        let m2 = (0..bound.tails.len())
            .find(|&m| bound.tails[m] <= eps * bound.dmax)
            .unwrap_or(bound.tails.len() - 1);
        let right = self.right_side(&qr, w, m2);
        let ln_h_cap = bound.dmax.ln();
        let mut terms: Vec<f64> = Vec::with_capacity(right.entries.len());
        for _ in 0..self.numerics.rejection_budget {
            let m1 = match &exact_s {
                Some(q) => q.sample(rng)?,
                None => approx_s.sample(rng),
            };
            let l1 = if m1 == 0 {
                0
            } else {
                Binomial::new(m1 as u64, u)
                    .expect("valid binomial parameters")
                    .sample(rng) as usize
            };
            let k1 = m1 - l1;
            let base = lg.ln_beta(l1, k1);
            terms.clear();
            terms.extend(
                right
                    .entries
                    .iter()
                    .map(|&(l2, k2, v)| (v + lg.ln_beta(l1 + l2, k1 + k2) - base - ln_h_cap).exp()),
            );
            let h: f64 = terms.iter().sum();
            let x: f64 = rng.random();
            if x < h {
                let mut target = rng.random::<f64>() * h;
                let mut idx = terms.len() - 1;
                for (n, &v) in terms.iter().enumerate() {
                    if target < v {
                        idx = n;
                        break;
                    }
                    target -= v;
                }
                let (l2, k2, _) = right.entries[idx];
                return Ok(sample_beta(
                    mu.theta_a() + (l1 + l2) as f64,
                    mu.theta_big() + (k1 + k2) as f64,
                    rng,
                ));
            }
        }
        Err(Error::RejectionBudget {
            budget: self.numerics.rejection_budget,
            context: format!("bridge point with gaps ({s}, {r})"),
        })
    }

    /// Values at `times` (strictly inside `(0, t)`) of the neutral bridge from
    /// `x` to `y`. Points left of the widest gap are filled left to right and
    /// the rest right to left, so every conditional step has at least one gap
    /// of length `≥ t / (K + 1)`.
    pub fn sample_skeleton<R: Rng + ?Sized>(
        &self,
        x: f64,
        y: f64,
        t: f64,
        times: &[f64],
        rng: &mut R,
    ) -> Result<BridgeSkeleton> {
        check_interior(x)?;
        check_interior(y)?;
        if !(t > 0.0) {
            return Err(Error::arg(format!("bridge horizon must be positive, got {t}")));
        }
        let mut prev = 0.0;
        for &ti in times {
            if !(ti > prev && ti < t) {
                return Err(Error::arg("bridge times must be strictly increasing inside (0, t)"));
            }
            prev = ti;
        }
        let k = times.len();
        let mut values = vec![f64::NAN; k];
        let mut approx_points = 0;
        if k > 0 {
            // gap g sits between point g-1 and point g, with -1 = start and k = end
            let at = |i: isize| -> f64 {
                if i < 0 {
                    0.0
                } else if i as usize >= k {
                    t
                } else {
                    times[i as usize]
                }
            };
            let widest = (0..=k)
                .max_by(|&a, &b| {
                    let ga = at(a as isize) - at(a as isize - 1);
                    let gb = at(b as isize) - at(b as isize - 1);
                    ga.partial_cmp(&gb).unwrap().then(b.cmp(&a))
                })
                .unwrap();
            let (mut left_t, mut left_v) = (0.0, x);
            for i in 0..widest {
                let (z, approx) = self.sample_point(left_v, y, times[i] - left_t, t - times[i], rng)?;
                approx_points += approx as usize;
                values[i] = z;
                left_t = times[i];
                left_v = z;
            }
            let (mut right_t, mut right_v) = (t, y);
            for i in (widest..k).rev() {
                let (z, approx) =
                    self.sample_point(left_v, right_v, times[i] - left_t, right_t - times[i], rng)?;
                approx_points += approx as usize;
                values[i] = z;
                right_t = times[i];
                right_v = z;
            }
        }
        Ok(BridgeSkeleton {
            x,
            y,
            t,
            times: times.to_vec(),
            values,
            approx_points,
        })
    }
}

fn pick<R: Rng + ?Sized>(weights: &[(usize, usize, f64)], rng: &mut R) -> (usize, usize) {
    let total: f64 = weights.iter().map(|e| e.2).sum();
    let mut target = rng.random::<f64>() * total;
    for &(i, j, v) in weights {
        if target < v {
            return (i, j);
        }
        target -= v;
    }
    let last = weights.last().expect("non-empty mixture");
    (last.0, last.1)
}

/// Neutral bridge skeleton from `(0, x)` to `(t, y)` at the given times.
pub fn sample_bridge_skeleton<R: Rng + ?Sized>(
    x: f64,
    y: f64,
    t: f64,
    times: &[f64],
    kernel: &NeutralKernel,
    numerics: &Numerics,
    rng: &mut R,
) -> Result<BridgeSkeleton> {
    BridgeSampler::new(kernel, numerics).sample_skeleton(x, y, t, times, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MutationRates;
    use crate::neutral::{transition_density_from_log, LogFreq};
    use crate::rng::{Purpose, Streams};
    use crate::stats::{ks_statistic, GridCdf};

    fn kernel() -> NeutralKernel {
        NeutralKernel::new(MutationRates::new(0.02, 0.02).unwrap())
    }

    #[test]
    fn midpoint_matches_product_density() {
        let k = kernel();
        let n = Numerics::default();
        let (x, y, t) = (0.2, 0.7, 1.0);
        let q = AncestralSampler::new(t / 2.0, 0.04, &n).unwrap();
        let f = |z: f64, zc: f64| {
            let zf = LogFreq::from_parts(z.ln(), zc.ln());
            transition_density_from_log(&q, LogFreq::new(x), zf, &k, 1e-12).unwrap()
                * transition_density_from_log(&q, zf, LogFreq::new(y), &k, 1e-12).unwrap()
        };
        let cdf = GridCdf::from_density(f, 0.02, 0.02, 2000);
        // the normalizer is p(x, y; t)
        let pxy = crate::neutral::transition_density_oracle(x, y, t, &k, 1e-12, &n).unwrap();
        assert!((cdf.mass / pxy - 1.0).abs() < 1e-4, "{} vs {pxy}", cdf.mass);
        let sampler = BridgeSampler::new(&k, &n);
        let mut rng = Streams::new(21).stream(Purpose::Selftest, &[0]);
        let zs: Vec<f64> = (0..3000)
            .map(|_| sampler.sample_skeleton(x, y, t, &[t / 2.0], &mut rng).unwrap().values[0])
            .collect();
        let ks = ks_statistic(&zs, |z| cdf.cdf(z));
        assert!(ks < 1.63 / (zs.len() as f64).sqrt(), "ks={ks}");
    }

    #[test]
    fn empty_times_and_reproducibility() {
        let k = kernel();
        let n = Numerics::default();
        let s = BridgeSampler::new(&k, &n);
        let mut rng = Streams::new(1).stream(Purpose::Bridge, &[0]);
        let b = s.sample_skeleton(0.3, 0.6, 1.0, &[], &mut rng).unwrap();
        assert!(b.times.is_empty() && b.values.is_empty());
        let times = [0.1, 0.35, 0.38, 0.9];
        let run = |seed| {
            let mut rng = Streams::new(seed).stream(Purpose::Bridge, &[0]);
            s.sample_skeleton(0.3, 0.6, 1.0, &times, &mut rng).unwrap()
        };
        let a = run(4);
        assert_eq!(a, run(4));
        assert!(a.values.iter().all(|&v| v > 0.0 && v < 1.0));
        // gap 0.35 -> 0.38 is below t_min
        assert_eq!(a.approx_points, 1);
    }

    #[test]
    fn small_first_gap_pins_value_near_start() {
        let k = kernel();
        let n = Numerics::default();
        let s = BridgeSampler::new(&k, &n);
        let mut rng = Streams::new(2).stream(Purpose::Bridge, &[1]);
        let spread = |gap: f64, rng: &mut crate::rng::StreamRng| {
            let v: Vec<f64> = (0..400)
                .map(|_| s.sample_skeleton(0.4, 0.6, 1.0, &[gap], rng).unwrap().values[0])
                .collect();
            crate::stats::mean_se(&v).1 * (v.len() as f64).sqrt()
        };
        let wide = spread(0.5, &mut rng);
        let narrow = spread(0.05, &mut rng);
        let tiny = spread(0.005, &mut rng);
        assert!(narrow < wide && tiny < narrow, "{wide} {narrow} {tiny}");
    }

    #[test]
    fn invalid_times_rejected() {
        let k = kernel();
        let n = Numerics::default();
        let s = BridgeSampler::new(&k, &n);
        let mut rng = Streams::new(1).stream(Purpose::Bridge, &[0]);
        assert!(s.sample_skeleton(0.3, 0.6, 1.0, &[0.5, 0.4], &mut rng).is_err());
        assert!(s.sample_skeleton(0.3, 0.6, 1.0, &[1.0], &mut rng).is_err());
        assert!(s.sample_skeleton(0.0, 0.6, 1.0, &[0.5], &mut rng).is_err());
    }
}
