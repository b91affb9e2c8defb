//! Log-gamma helpers and cached tables for beta/binomial weights.

use statrs::function::gamma::ln_gamma;

use crate::model::MutationRates;

/// `ln B(a, b)`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Log density of Beta(a, b) at an interior point `y`.
pub fn beta_ln_pdf(y: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * y.ln() + (b - 1.0) * (-y).ln_1p() - ln_beta(a, b)
}

/// `ln n!`
pub fn ln_factorial(n: usize) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

/// `ln C(n, k)`
pub fn ln_choose(n: usize, k: usize) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Stable `ln(sum(exp(v)))`; `-inf` for an empty or all `-inf` slice.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

const TABLE_CAP: usize = 1024;

/// Precomputed `ln Γ(θ_a + i)`, `ln Γ(θ_A + j)`, `ln Γ(θ + n)` and `ln n!`
/// for the integer offsets that appear in beta-binomial mixtures. Offsets
/// beyond the table fall back to direct evaluation.
#[derive(Debug, Clone)]
pub struct LnGammaTable {
    theta_a: f64,
    theta_big: f64,
    lg_a: Vec<f64>,
    lg_b: Vec<f64>,
    lg_ab: Vec<f64>,
    lfact: Vec<f64>,
}

impl LnGammaTable {
    pub fn new(mutation: MutationRates) -> Self {
        let (a, b) = (mutation.theta_a(), mutation.theta_big());
        let lg_a = (0..TABLE_CAP).map(|i| ln_gamma(a + i as f64)).collect();
        let lg_b = (0..TABLE_CAP).map(|i| ln_gamma(b + i as f64)).collect();
        let lg_ab = (0..2 * TABLE_CAP).map(|i| ln_gamma(a + b + i as f64)).collect();
        let mut lfact = Vec::with_capacity(2 * TABLE_CAP);
        let mut acc = 0.0;
        lfact.push(0.0);
        for i in 1..2 * TABLE_CAP {
            acc += (i as f64).ln();
            lfact.push(acc);
        }
        LnGammaTable {
            theta_a: a,
            theta_big: b,
            lg_a,
            lg_b,
            lg_ab,
            lfact,
        }
    }

    #[inline]
    fn lg_a(&self, i: usize) -> f64 {
        self.lg_a
            .get(i)
            .copied()
            .unwrap_or_else(|| ln_gamma(self.theta_a + i as f64))
    }

    #[inline]
    fn lg_b(&self, j: usize) -> f64 {
        self.lg_b
            .get(j)
            .copied()
            .unwrap_or_else(|| ln_gamma(self.theta_big + j as f64))
    }

    #[inline]
    fn lg_ab(&self, n: usize) -> f64 {
        self.lg_ab
            .get(n)
            .copied()
            .unwrap_or_else(|| ln_gamma(self.theta_a + self.theta_big + n as f64))
    }

    #[inline]
    pub fn ln_factorial(&self, n: usize) -> f64 {
        self.lfact
            .get(n)
            .copied()
            .unwrap_or_else(|| ln_factorial(n))
    }

    #[inline]
    pub fn ln_choose(&self, n: usize, k: usize) -> f64 {
        self.ln_factorial(n) - self.ln_factorial(k) - self.ln_factorial(n - k)
    }

    /// `ln B(θ_a + i, θ_A + j)`.
    #[inline]
    pub fn ln_beta(&self, i: usize, j: usize) -> f64 {
        self.lg_a(i) + self.lg_b(j) - self.lg_ab(i + j)
    }

    /// `ln D_{θ,l}(y)` with `m - l = j`: log density of Beta(θ_a + i, θ_A + j) at `y`,
    /// given `ln y` and `ln(1 - y)`.
    #[inline]
    pub fn beta_ln_pdf(&self, i: usize, j: usize, ln_y: f64, ln_1my: f64) -> f64 {
        (self.theta_a + i as f64 - 1.0) * ln_y + (self.theta_big + j as f64 - 1.0) * ln_1my
            - self.ln_beta(i, j)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_matches_direct() {
        let mu = MutationRates::new(0.02, 0.03).unwrap();
        let t = LnGammaTable::new(mu);
        for &(i, j) in &[(0, 0), (3, 7), (500, 2), (1500, 1600)] {
            let direct = ln_beta(0.02 + i as f64, 0.03 + j as f64);
            assert!((t.ln_beta(i, j) - direct).abs() < 1e-9 * direct.abs().max(1.0));
        }
        assert!((t.ln_choose(10, 3) - 120f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_sum_exp(&[-1e300, 0.0]) - 0.0).abs() < 1e-15);
    }
}
