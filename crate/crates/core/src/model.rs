//! Selection models: drift decomposition, Girsanov functionals and their bounds.
//!
//! A model perturbs the neutral Wright-Fisher drift `α(x)` by `x(1-x) η(x; ϑ)`.
//! Everything the estimator needs from a model is expressed through the
//! potential `A` (with `∇A = η`), the exponent `φ`, and bounds on both.
//! States are slices with one entry per locus; parameters are flat slices.

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neutral mutation rates `θ_a` (towards type a) and `θ_A` (towards type A).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutationRates {
    theta_a: f64,
    #[serde(rename = "theta_A")]
    theta_big: f64,
}

impl MutationRates {
    pub fn new(theta_a: f64, theta_big: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(theta_a) || !ok(theta_big) {
            return Err(Error::InvalidMutation {
                theta_a,
                theta_big,
            });
        }
        Ok(MutationRates {
            theta_a,
            theta_big,
        })
    }

    pub fn theta_a(&self) -> f64 {
        self.theta_a
    }

    /// `θ_A`
    pub fn theta_big(&self) -> f64 {
        self.theta_big
    }

    /// `θ = θ_a + θ_A`
    pub fn theta(&self) -> f64 {
        self.theta_a + self.theta_big
    }
}

/// Neutral mutation drift `α(x) = (θ_a - θ x) / 2`.
#[inline]
pub fn alpha(x: f64, mutation: MutationRates) -> f64 {
    0.5 * (mutation.theta_a - mutation.theta() * x)
}

/// `φ = ½[x(1-x)(η² + η') + 2ηα]` for a scalar drift perturbation with value
/// `eta` and derivative `deta` at `x`.
pub fn phi_from_drift(x: f64, eta: f64, deta: f64, mutation: MutationRates) -> f64 {
    0.5 * (x * (1.0 - x) * (eta * eta + deta) + 2.0 * eta * alpha(x, mutation))
}

/// Compact box of admissible parameters. A coordinate with `lower == upper`
/// is held fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParameterDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidDomain(format!(
                "bounds must be non-empty and of equal length (got {} and {})",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidDomain(format!("bound {i} is not finite")));
            }
            if lo > hi {
                return Err(Error::InvalidDomain(format!(
                    "lower[{i}] = {lo} exceeds upper[{i}] = {hi}"
                )));
            }
        }
        Ok(ParameterDomain { lower, upper })
    }

    /// `[-c, c]`
    pub fn symmetric(c: f64) -> Result<Self> {
        Self::new(vec![-c], vec![c])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Indices of coordinates that are not fixed.
    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&i| self.lower[i] < self.upper[i])
            .collect()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&t, (&lo, &hi))| t >= lo && t <= hi)
    }

    pub fn clamp(&self, theta: &mut [f64]) {
        for (i, t) in theta.iter_mut().enumerate() {
            *t = t.clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    /// All corners of the box (fixed coordinates contribute one value).
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let free = self.free_indices();
        let mut out = Vec::with_capacity(1 << free.len().min(20));
        for mask in 0u64..(1u64 << free.len()) {
            let mut v = self.lower.clone();
            for (bit, &i) in free.iter().enumerate() {
                if mask >> bit & 1 == 1 {
                    v[i] = self.upper[i];
                }
            }
            out.push(v);
        }
        out
    }

    /// Sub-box on the given coordinates.
    pub fn project(&self, indices: &[usize]) -> ParameterDomain {
        ParameterDomain {
            lower: indices.iter().map(|&i| self.lower[i]).collect(),
            upper: indices.iter().map(|&i| self.upper[i]).collect(),
        }
    }
}

/// Lower and upper bound of `x ↦ φ(x; ϑ)` over the state space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiBounds {
    pub lower: f64,
    pub upper: f64,
}

impl PhiBounds {
    pub fn spread(&self) -> f64 {
        self.upper - self.lower
    }
}

/// A block of loci whose likelihood can be estimated independently of the
/// rest, together with the model and parameter coordinates it uses.
#[derive(Debug, Clone)]
pub struct Component {
    pub loci: Vec<usize>,
    pub params: Vec<usize>,
    pub model: Arc<dyn SelectionModel>,
    pub domain: ParameterDomain,
}

impl Component {
    pub fn project_params(&self, theta: &[f64]) -> Vec<f64> {
        self.params.iter().map(|&i| theta[i]).collect()
    }

    pub fn project_state(&self, x: &[f64]) -> Vec<f64> {
        self.loci.iter().map(|&k| x[k]).collect()
    }
}

pub trait SelectionModel: Debug + Send + Sync {
    /// Number of loci `L` (state dimension).
    fn loci(&self) -> usize;

    /// Length of the parameter vector.
    fn n_params(&self) -> usize;

    fn mutation(&self) -> MutationRates;

    /// Drift perturbation `η` (one entry per locus).
    fn eta(&self, x: &[f64], theta: &[f64]) -> Vec<f64>;

    /// Girsanov potential `A(x; ϑ)`, with `A(0; ϑ) = 0`.
    fn potential(&self, x: &[f64], theta: &[f64]) -> f64;

    fn phi(&self, x: &[f64], theta: &[f64]) -> f64;

    fn phi_bounds(&self, theta: &[f64]) -> PhiBounds;

    /// `A⁺(ϑ) ≥ sup_x A(x; ϑ)`.
    fn potential_max(&self, theta: &[f64]) -> f64;

    /// Dominating Poisson rate valid for every parameter in `domain`:
    /// at least `sup_ϑ φ⁺(ϑ) - φ⁻(ϑ)`.
    fn sam_rate(&self, domain: &ParameterDomain) -> f64;

    /// Split into blocks that are independent for every parameter in `domain`.
    fn components(&self, domain: &ParameterDomain) -> Vec<Component>;
}

/// Haploid selection: `η(x; ϑ) = ϑ/2`, `A = ϑx/2`,
/// `φ = ½[x(1-x)ϑ²/4 + ϑα(x)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaploidModel {
    mutation: MutationRates,
}

impl HaploidModel {
    pub fn new(mutation: MutationRates) -> Self {
        HaploidModel { mutation }
    }

    pub fn phi_scalar(&self, x: f64, theta: f64) -> f64 {
        0.5 * (x * (1.0 - x) * theta * theta / 4.0 + theta * alpha(x, self.mutation))
    }

    /// Vertex value `k₁`, `k₂ = φ(0)` and `k₃ = φ(1)`; `k₁` is `None` when the
    /// parabola's vertex lies outside `[0, 1]` (or `ϑ = 0`).
    pub fn bound_candidates(&self, theta: f64) -> (Option<f64>, f64, f64) {
        let (ta, tb, th) = (
            self.mutation.theta_a(),
            self.mutation.theta_big(),
            self.mutation.theta(),
        );
        let k2 = theta * ta / 4.0;
        let k3 = -theta * tb / 4.0;
        let k1 = if theta != 0.0 {
            let vertex = 0.5 - th / theta;
            ((0.0..=1.0).contains(&vertex))
                .then(|| (theta * theta + 4.0 * theta * (ta - tb) + 4.0 * th * th) / 32.0)
        } else {
            None
        };
        (k1, k2, k3)
    }

    pub fn bounds_scalar(&self, theta: f64) -> PhiBounds {
        let (k1, k2, k3) = self.bound_candidates(theta);
        let mut lower = k2.min(k3);
        let mut upper = k2.max(k3);
        if let Some(k1) = k1 {
            lower = lower.min(k1);
            upper = upper.max(k1);
        }
        PhiBounds { lower, upper }
    }
}

impl SelectionModel for HaploidModel {
    fn loci(&self) -> usize {
        1
    }

    fn n_params(&self) -> usize {
        1
    }

    fn mutation(&self) -> MutationRates {
        self.mutation
    }

    fn eta(&self, _x: &[f64], theta: &[f64]) -> Vec<f64> {
        vec![theta[0] / 2.0]
    }

    fn potential(&self, x: &[f64], theta: &[f64]) -> f64 {
        theta[0] * x[0] / 2.0
    }

    fn phi(&self, x: &[f64], theta: &[f64]) -> f64 {
        self.phi_scalar(x[0], theta[0])
    }

    fn phi_bounds(&self, theta: &[f64]) -> PhiBounds {
        self.bounds_scalar(theta[0])
    }

    fn potential_max(&self, theta: &[f64]) -> f64 {
        (theta[0] / 2.0).max(0.0)
    }

    /// The spread `φ⁺(ϑ) - φ⁻(ϑ)` is convex in `ϑ` (a supremum of functions
    /// convex in `ϑ` minus a minimum of linear ones), so the endpoints of the
    /// interval attain its maximum.
    fn sam_rate(&self, domain: &ParameterDomain) -> f64 {
        [domain.lower()[0], domain.upper()[0]]
            .iter()
            .map(|&t| self.bounds_scalar(t).spread())
            .fold(0.0, f64::max)
    }

    fn components(&self, domain: &ParameterDomain) -> Vec<Component> {
        vec![Component {
            loci: vec![0],
            params: vec![0],
            model: Arc::new(*self),
            domain: domain.clone(),
        }]
    }
}

/// Full coupled parameters: selective advantages `s[k][j]` and pairwise
/// interactions `h[k][l][j][r]` (type `j` at locus `k` with type `r` at locus `l`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledParams {
    pub s: Vec<[f64; 2]>,
    pub h: Vec<Vec<[[f64; 2]; 2]>>,
}

impl CoupledParams {
    /// Validate shapes and the symmetry `h[k][l][j][r] = h[l][k][r][j]`.
    pub fn new(s: Vec<[f64; 2]>, h: Vec<Vec<[[f64; 2]; 2]>>) -> Result<Self> {
        let loci = s.len();
        if loci == 0 {
            return Err(Error::arg("coupled model needs at least one locus"));
        }
        if h.len() != loci || h.iter().any(|row| row.len() != loci) {
            return Err(Error::arg(format!(
                "interaction tensor must be {loci}x{loci}x2x2"
            )));
        }
        for k in 0..loci {
            for l in 0..loci {
                if k == l {
                    continue;
                }
                for j in 0..2 {
                    for r in 0..2 {
                        let (a, b) = (h[k][l][j][r], h[l][k][r][j]);
                        if a != b {
                            return Err(Error::AsymmetricInteraction { k, l, j, r, a, b });
                        }
                    }
                }
            }
        }
        Ok(CoupledParams { s, h })
    }

    pub fn zero(loci: usize) -> Self {
        CoupledParams {
            s: vec![[0.0; 2]; loci],
            h: vec![vec![[[0.0; 2]; 2]; loci]; loci],
        }
    }

    pub fn loci(&self) -> usize {
        self.s.len()
    }

    /// Reduced parameter vector `(c_1..c_L, d_12, d_13, .., d_{L-1,L})` with
    /// `c_k = s^{k1} - s^{k2} + Σ_{l≠k}(h^{kl}_{12} - h^{kl}_{22})` and
    /// `d_kl = h^{kl}_{11} - h^{kl}_{12} - h^{kl}_{21} + h^{kl}_{22}`, so that
    /// `V^k(x) = c_k + Σ_{l≠k} d_kl x^l`.
    pub fn reduce(&self) -> Vec<f64> {
        let loci = self.loci();
        let mut out = Vec::with_capacity(CoupledModel::param_count(loci));
        for k in 0..loci {
            let mut c = self.s[k][0] - self.s[k][1];
            for l in 0..loci {
                if l != k {
                    c += self.h[k][l][0][1] - self.h[k][l][1][1];
                }
            }
            out.push(c);
        }
        for k in 0..loci {
            for l in k + 1..loci {
                let hk = &self.h[k][l];
                out.push(hk[0][0] - hk[0][1] - hk[1][0] + hk[1][1]);
            }
        }
        out
    }
}

/// Coupled multilocus selection. The parameter vector is the reduced form
/// produced by [`CoupledParams::reduce`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledModel {
    loci: usize,
    mutation: MutationRates,
}

impl CoupledModel {
    pub fn new(loci: usize, mutation: MutationRates) -> Result<Self> {
        if loci == 0 {
            return Err(Error::arg("coupled model needs at least one locus"));
        }
        Ok(CoupledModel { loci, mutation })
    }

    pub fn param_count(loci: usize) -> usize {
        loci + loci * (loci - 1) / 2
    }

    /// Index of `d_kl` (`k != l`) in the reduced parameter vector.
    pub fn pair_index(&self, k: usize, l: usize) -> usize {
        let (a, b) = if k < l { (k, l) } else { (l, k) };
        // pairs (a, b) with a < b enumerated row by row
        self.loci + a * (2 * self.loci - a - 1) / 2 + (b - a - 1)
    }

    fn v(&self, x: &[f64], theta: &[f64], k: usize) -> f64 {
        let mut v = theta[k];
        for (l, &xl) in x.iter().enumerate() {
            if l != k {
                v += theta[self.pair_index(k, l)] * xl;
            }
        }
        v
    }

    /// Range of `V^k` over `[0,1]^L` for a fixed parameter.
    fn v_range(&self, theta: &[f64], k: usize) -> (f64, f64) {
        let (mut lo, mut hi) = (theta[k], theta[k]);
        for l in 0..self.loci {
            if l != k {
                let d = theta[self.pair_index(k, l)];
                lo += d.min(0.0);
                hi += d.max(0.0);
            }
        }
        (lo, hi)
    }

    /// Bounds on `½x(1-x)v² + vα(x)` over `x ∈ [0,1]` and `v ∈ [vlo, vhi]`.
    /// For fixed `v` this is the haploid `φ` at `ϑ = 2v`, whose maximum is
    /// convex and minimum concave in `v`, so the interval ends suffice.
    fn term_bounds(&self, vlo: f64, vhi: f64) -> PhiBounds {
        let hap = HaploidModel::new(self.mutation);
        let a = hap.bounds_scalar(2.0 * vlo);
        let b = hap.bounds_scalar(2.0 * vhi);
        PhiBounds {
            lower: a.lower.min(b.lower),
            upper: a.upper.max(b.upper),
        }
    }

    /// Per-locus `V^k` intervals covering every parameter in `domain`.
    fn v_range_over(&self, domain: &ParameterDomain, k: usize) -> (f64, f64) {
        let (lo, hi) = (domain.lower(), domain.upper());
        let (mut vlo, mut vhi) = (lo[k], hi[k]);
        for l in 0..self.loci {
            if l != k {
                let p = self.pair_index(k, l);
                vlo += lo[p].min(0.0);
                vhi += hi[p].max(0.0);
            }
        }
        (vlo, vhi)
    }
}

impl SelectionModel for CoupledModel {
    fn loci(&self) -> usize {
        self.loci
    }

    fn n_params(&self) -> usize {
        Self::param_count(self.loci)
    }

    fn mutation(&self) -> MutationRates {
        self.mutation
    }

    fn eta(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        (0..self.loci).map(|k| self.v(x, theta, k)).collect()
    }

    fn potential(&self, x: &[f64], theta: &[f64]) -> f64 {
        let mut a = 0.0;
        for k in 0..self.loci {
            a += theta[k] * x[k];
            for l in k + 1..self.loci {
                a += theta[self.pair_index(k, l)] * x[k] * x[l];
            }
        }
        a
    }

    /// `½[VᵀDV + 2Vᵀα]` with `D = diag(x^k(1-x^k))`.
    fn phi(&self, x: &[f64], theta: &[f64]) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.loci {
            let v = self.v(x, theta, k);
            acc += x[k] * (1.0 - x[k]) * v * v + 2.0 * v * alpha(x[k], self.mutation);
        }
        0.5 * acc
    }

    fn phi_bounds(&self, theta: &[f64]) -> PhiBounds {
        let mut total = PhiBounds {
            lower: 0.0,
            upper: 0.0,
        };
        for k in 0..self.loci {
            let (vlo, vhi) = self.v_range(theta, k);
            let b = self.term_bounds(vlo, vhi);
            total.lower += b.lower;
            total.upper += b.upper;
        }
        total
    }

    /// `Ã` is multilinear, so its maximum over the cube sits at a corner.
    fn potential_max(&self, theta: &[f64]) -> f64 {
        if self.loci <= 16 {
            let mut best = f64::NEG_INFINITY;
            let mut x = vec![0.0; self.loci];
            for mask in 0u32..(1u32 << self.loci) {
                for (k, xk) in x.iter_mut().enumerate() {
                    *xk = (mask >> k & 1) as f64;
                }
                best = best.max(self.potential(&x, theta));
            }
            best
        } else {
            theta.iter().map(|t| t.max(0.0)).sum()
        }
    }

    /// Each locus term's spread grows with the `V^k` interval it is bounded
    /// over, so bounding with the union of those intervals across the whole
    /// domain dominates the spread at every parameter in it.
    fn sam_rate(&self, domain: &ParameterDomain) -> f64 {
        if self.loci == 1 {
            return HaploidModel::new(self.mutation).sam_rate(&ParameterDomain {
                lower: vec![2.0 * domain.lower()[0]],
                upper: vec![2.0 * domain.upper()[0]],
            });
        }
        (0..self.loci)
            .map(|k| {
                let (vlo, vhi) = self.v_range_over(domain, k);
                self.term_bounds(vlo, vhi).spread()
            })
            .sum()
    }

    /// Loci `k` and `l` are linked when `d_kl` is not pinned to zero.
    fn components(&self, domain: &ParameterDomain) -> Vec<Component> {
        let mut parent: Vec<usize> = (0..self.loci).collect();
        fn find(p: &mut [usize], i: usize) -> usize {
            let mut r = i;
            while p[r] != r {
                r = p[r];
            }
            let mut i = i;
            while p[i] != r {
                let next = p[i];
                p[i] = r;
                i = next;
            }
            r
        }
        for k in 0..self.loci {
            for l in k + 1..self.loci {
                let p = self.pair_index(k, l);
                if !(domain.lower()[p] == 0.0 && domain.upper()[p] == 0.0) {
                    let (a, b) = (find(&mut parent, k), find(&mut parent, l));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut root_of_group: Vec<usize> = Vec::new();
        for k in 0..self.loci {
            let r = find(&mut parent, k);
            match root_of_group.iter().position(|&g| g == r) {
                Some(i) => groups[i].push(k),
                None => {
                    root_of_group.push(r);
                    groups.push(vec![k]);
                }
            }
        }
        groups
            .into_iter()
            .map(|loci| {
                let sub = CoupledModel {
                    loci: loci.len(),
                    mutation: self.mutation,
                };
                let mut params: Vec<usize> = loci.clone();
                for (a, &k) in loci.iter().enumerate() {
                    for &l in &loci[a + 1..] {
                        params.push(self.pair_index(k, l));
                    }
                }
                let domain = domain.project(&params);
                Component {
                    loci,
                    params,
                    model: Arc::new(sub),
                    domain,
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mu(a: f64, b: f64) -> MutationRates {
        MutationRates::new(a, b).unwrap()
    }

    #[test]
    fn mutation_rates_must_be_positive() {
        assert!(MutationRates::new(0.0, 0.1).is_err());
        assert!(MutationRates::new(0.1, -1.0).is_err());
        assert!(MutationRates::new(f64::NAN, 0.1).is_err());
        assert_eq!(mu(0.02, 0.03).theta(), 0.05);
    }

    #[test]
    fn alpha_values() {
        let m = mu(0.02, 0.02);
        assert_eq!(alpha(0.5, m), 0.0);
        assert_eq!(alpha(0.0, mu(0.3, 0.1)), 0.15);
        // α(1) = -θ_A/2
        assert!((alpha(1.0, m) + 0.01).abs() < 1e-17);
    }

    #[test]
    fn haploid_phi_and_potential() {
        let h = HaploidModel::new(mu(0.02, 0.02));
        assert_eq!(h.phi(&[0.3], &[0.0]), 0.0);
        assert!((h.phi(&[0.0], &[0.7]) - 0.0035).abs() < 1e-15);
        let da = h.potential(&[0.6], &[0.7]) - h.potential(&[0.3], &[0.7]);
        assert!((da - 0.105).abs() < 1e-15);
        assert_eq!(h.eta(&[0.9], &[0.7]), vec![0.35]);
    }

    #[test]
    fn haploid_bounds_example() {
        let h = HaploidModel::new(mu(0.02, 0.02));
        let (k1, k2, k3) = h.bound_candidates(0.7);
        assert!((k1.unwrap() - 0.015_512_5).abs() < 1e-15);
        assert!((k2 - 0.0035).abs() < 1e-16);
        assert!((k3 + 0.0035).abs() < 1e-16);
        let b = h.phi_bounds(&[0.7]);
        assert!((b.lower + 0.0035).abs() < 1e-16 && (b.upper - 0.015_512_5).abs() < 1e-15);
        assert_eq!(h.phi_bounds(&[0.0]), PhiBounds { lower: 0.0, upper: 0.0 });
        // vertex outside [0,1] for small |ϑ| < 2θ
        assert!(h.bound_candidates(0.05).0.is_none());
    }

    #[test]
    fn haploid_sam_rate_example() {
        let h = HaploidModel::new(mu(0.02, 0.02));
        let r = h.sam_rate(&ParameterDomain::symmetric(1.0).unwrap());
        assert!((r - 0.036_45).abs() < 1e-15, "{r}");
        let zero = ParameterDomain::new(vec![0.0], vec![0.0]).unwrap();
        assert_eq!(h.sam_rate(&zero), 0.0);
    }

    #[test]
    fn domain_validation() {
        assert!(ParameterDomain::new(vec![1.0], vec![0.0]).is_err());
        assert!(ParameterDomain::new(vec![], vec![]).is_err());
        assert!(ParameterDomain::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(ParameterDomain::new(vec![f64::NEG_INFINITY], vec![0.0]).is_err());
        let d = ParameterDomain::new(vec![-1.0, 0.0, 2.0], vec![1.0, 0.0, 3.0]).unwrap();
        assert_eq!(d.free_indices(), vec![0, 2]);
        assert_eq!(d.vertices().len(), 4);
        assert!(d.contains(&[0.0, 0.0, 2.5]) && !d.contains(&[0.0, 0.1, 2.5]));
    }

    #[test]
    fn coupled_pair_index_is_dense() {
        let m = CoupledModel::new(4, mu(0.02, 0.02)).unwrap();
        let mut seen = Vec::new();
        for k in 0..4 {
            for l in k + 1..4 {
                assert_eq!(m.pair_index(k, l), m.pair_index(l, k));
                seen.push(m.pair_index(k, l));
            }
        }
        assert_eq!(seen, (4..10).collect::<Vec<_>>());
    }

    #[test]
    fn asymmetric_interaction_rejected() {
        let mut p = CoupledParams::zero(2);
        p.h[0][1][0][1] = 0.3;
        let err = CoupledParams::new(p.s.clone(), p.h.clone()).unwrap_err();
        assert!(matches!(err, Error::AsymmetricInteraction { .. }));
        p.h[1][0][1][0] = 0.3;
        assert!(CoupledParams::new(p.s, p.h).is_ok());
    }

    #[test]
    fn coupled_reduction_without_interactions() {
        let mut p = CoupledParams::zero(2);
        p.s = vec![[0.5, 0.1], [-0.2, 0.1]];
        let theta = p.reduce();
        assert_eq!(theta.len(), 3);
        assert!((theta[0] - 0.4).abs() < 1e-15 && (theta[1] + 0.3).abs() < 1e-15);
        assert_eq!(theta[2], 0.0);
        let m = CoupledModel::new(2, mu(0.02, 0.03)).unwrap();
        let a = m.potential(&[0.2, 0.7], &theta);
        assert!((a - (0.4 * 0.2 - 0.3 * 0.7)).abs() < 1e-15);
    }

    #[test]
    fn coupled_components_follow_pinned_interactions() {
        let m = CoupledModel::new(3, mu(0.02, 0.02)).unwrap();
        // params: c0 c1 c2 d01 d02 d12 ; only d12 free
        let d = ParameterDomain::new(
            vec![-1.0, -1.0, -1.0, 0.0, 0.0, -0.5],
            vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.5],
        )
        .unwrap();
        let comps = m.components(&d);
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0].loci, vec![0]);
        assert_eq!(comps[0].params, vec![0]);
        assert_eq!(comps[1].loci, vec![1, 2]);
        assert_eq!(comps[1].params, vec![1, 2, 5]);
    }

    proptest::proptest! {
        #[test]
        fn haploid_bounds_hold(
            theta in -5.0f64..5.0,
            x in 1e-9f64..1.0,
            a in 0.001f64..2.0,
            b in 0.001f64..2.0,
        ) {
            let m = HaploidModel::new(mu(a, b));
            let p = m.phi(&[x], &[theta]);
            let bounds = m.phi_bounds(&[theta]);
            proptest::prop_assert!(bounds.lower <= p + 1e-12 && p <= bounds.upper + 1e-12);
            proptest::prop_assert!(m.potential(&[x], &[theta]) <= m.potential_max(&[theta]) + 1e-15);
            let rate = m.sam_rate(&ParameterDomain::symmetric(theta.abs().max(0.1)).unwrap());
            proptest::prop_assert!(bounds.spread() <= rate * (1.0 + 1e-12));
        }

        #[test]
        fn coupled_bounds_hold(
            theta in proptest::collection::vec(-1.0f64..1.0, 3),
            x in proptest::collection::vec(1e-9f64..1.0, 2),
        ) {
            let m = CoupledModel::new(2, mu(0.02, 0.03)).unwrap();
            let p = m.phi(&x, &theta);
            let bounds = m.phi_bounds(&theta);
            proptest::prop_assert!(bounds.lower <= p + 1e-12 && p <= bounds.upper + 1e-12);
            proptest::prop_assert!(m.potential(&x, &theta) <= m.potential_max(&theta) + 1e-12);
            let rate = m.sam_rate(&ParameterDomain::new(vec![-1.0; 3], vec![1.0; 3]).unwrap());
            proptest::prop_assert!(bounds.spread() <= rate * (1.0 + 1e-12));
        }

        #[test]
        fn one_locus_coupled_is_haploid_at_twice_the_parameter(c in -2.0f64..2.0, x in 1e-9f64..1.0) {
            let h = HaploidModel::new(mu(0.02, 0.02));
            let k = CoupledModel::new(1, mu(0.02, 0.02)).unwrap();
            proptest::prop_assert!((k.phi(&[x], &[c]) - h.phi(&[x], &[2.0 * c])).abs() < 1e-12);
            proptest::prop_assert!((k.potential(&[x], &[c]) - h.potential(&[x], &[2.0 * c])).abs() < 1e-12);
        }
    }
}
