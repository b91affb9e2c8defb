//! Goodness-of-fit helpers used by the self-tests and the acceptance suite.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Cumulative distribution tabulated on a grid, built by quadrature of an
/// unnormalized density on `(0, 1)`.
#[derive(Debug, Clone)]
pub struct GridCdf {
    z: Vec<f64>,
    cdf: Vec<f64>,
    /// Integral of the density before normalization.
    pub mass: f64,
}

/// Composite Simpson nodes of `∫ g(w) dw` over `[0, 1]`, accumulated per pair
/// of intervals. Returns `(w, cumulative)` at even nodes. `g(0)` is not
/// evaluated; it is extrapolated from the next three nodes.
fn cumulative_simpson(g: &dyn Fn(f64) -> f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let n = n + n % 2;
    let h = 1.0 / n as f64;
    let mut ws = vec![0.0];
    let mut acc = vec![0.0];
    let mut total = 0.0;
    let mut prev = (3.0 * g(h) - 3.0 * g(2.0 * h) + g(3.0 * h)).max(0.0);
    for i in (0..n).step_by(2) {
        let mid = g((i + 1) as f64 * h);
        let end = g((i + 2) as f64 * h);
        total += h / 3.0 * (prev + 4.0 * mid + end);
        ws.push((i + 2) as f64 * h);
        acc.push(total);
        prev = end;
    }
    (ws, acc)
}

impl GridCdf {
    /// Integrate `f(z, 1 - z)` over `(0, 1)`; the complement is passed
    /// separately so points within rounding of 1 stay distinguishable. Near
    /// each boundary the variable is stretched as `z = ½ w^p` (and mirrored at 1) with `p = max(1, 1/a)`,
    /// which absorbs integrable `z^{a-1}` singularities.
    pub fn from_density(f: impl Fn(f64, f64) -> f64, a: f64, b: f64, n: usize) -> Self {
        let pa = (1.0 / a).max(1.0);
        let pb = (1.0 / b).max(1.0);
        let lower = |w: f64| {
            let z = 0.5 * w.powf(pa);
            if z <= 0.0 {
                return 0.0;
            }
            f(z, 1.0 - z) * 0.5 * pa * w.powf(pa - 1.0)
        };
        let upper = |w: f64| {
            let d = 0.5 * w.powf(pb);
            if d <= 0.0 {
                return 0.0;
            }
            f(1.0 - d, d) * 0.5 * pb * w.powf(pb - 1.0)
        };
        let (wl, cl) = cumulative_simpson(&lower, n);
        let (wu, cu) = cumulative_simpson(&upper, n);
        let half = *cl.last().unwrap();
        let total = half + cu.last().unwrap();
        let mut z = Vec::with_capacity(wl.len() + wu.len());
        let mut cdf = Vec::with_capacity(z.capacity());
        for (w, c) in wl.iter().zip(&cl) {
            z.push(0.5 * w.powf(pa));
            cdf.push(c / total);
        }
        // upper half in increasing z: w runs from 1 down to 0
        for (w, c) in wu.iter().zip(&cu).rev().skip(1) {
            z.push(1.0 - 0.5 * w.powf(pb));
            cdf.push((total - c) / total);
        }
        GridCdf { z, cdf, mass: total }
    }

    /// Linear interpolation of the tabulated CDF.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.z[0] {
            return 0.0;
        }
        if x >= *self.z.last().unwrap() {
            return 1.0;
        }
        let i = self.z.partition_point(|&v| v <= x);
        let (z0, z1) = (self.z[i - 1], self.z[i]);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        if z1 == z0 {
            return c1;
        }
        c0 + (c1 - c0) * (x - z0) / (z1 - z0)
    }
}

/// Kolmogorov-Smirnov distance between a sample and a CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Total-variation distance between empirical counts and a pmf.
pub fn tv_distance(counts: &[usize], pmf: &[f64]) -> f64 {
    let n: usize = counts.iter().sum();
    let len = counts.len().max(pmf.len());
    0.5 * (0..len)
        .map(|i| {
            let e = counts.get(i).copied().unwrap_or(0) as f64 / n as f64;
            (e - pmf.get(i).copied().unwrap_or(0.0)).abs()
        })
        .sum::<f64>()
}

/// Pearson chi-square test of counts against a pmf. Cells with expected count
/// below 5 are pooled into their neighbours. Returns `(statistic, dof, p-value)`.
pub fn chi_square_gof(counts: &[usize], pmf: &[f64]) -> (f64, usize, f64) {
    let n: usize = counts.iter().sum();
    let len = counts.len().max(pmf.len());
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    for i in 0..len {
        obs += counts.get(i).copied().unwrap_or(0) as f64;
        exp += pmf.get(i).copied().unwrap_or(0.0) * n as f64;
        if exp >= 5.0 {
            cells.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    // leftover mass (including anything beyond the pmf) joins the last cell
    let rest = (n as f64 - cells.iter().map(|c| c.1).sum::<f64>() - exp).max(0.0);
    match cells.last_mut() {
        Some(last) => {
            last.0 += obs;
            last.1 += exp + rest;
        }
        None => cells.push((obs, exp + rest)),
    }
    let stat: f64 = cells.iter().map(|&(o, e)| (o - e).powi(2) / e).sum();
    let dof = cells.len().saturating_sub(1);
    let p = if dof == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat)
    };
    (stat, dof, p)
}

/// Mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::ln_beta;

    #[test]
    fn grid_cdf_of_singular_beta() {
        let g = GridCdf::from_density(
            |z, zc| ((0.02 - 1.0) * z.ln() + (0.05 - 1.0) * zc.ln() - ln_beta(0.02, 0.05)).exp(),
            0.02,
            0.05,
            4000,
        );
        assert!((g.mass - 1.0).abs() < 1e-6, "{}", g.mass);
        // P(Z < 1/2) for Beta(a, b) with tiny shapes ≈ b / (a + b)
        assert!((g.cdf(0.5) - 0.05 / 0.07).abs() < 0.01);
        let u = GridCdf::from_density(|_, _| 2.0, 1.0, 1.0, 100);
        assert!((u.cdf(0.3) - 0.3).abs() < 1e-12 && (u.mass - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gof_helpers() {
        assert_eq!(tv_distance(&[5, 5], &[0.5, 0.5]), 0.0);
        let (_, dof, p) = chi_square_gof(&[500, 500], &[0.5, 0.5]);
        assert_eq!(dof, 1);
        assert!((p - 1.0).abs() < 1e-12);
        let ks = ks_statistic(&[0.1, 0.4, 0.7], |x| x);
        assert!((ks - 0.3).abs() < 1e-12);
        let (m, se) = mean_se(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-15);
    }
}
