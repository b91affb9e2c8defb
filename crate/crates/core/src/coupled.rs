//! Multilocus assembly: interaction drift, joint neutral bridges and the
//! coupled likelihood contribution.

use rand::Rng;

use crate::bridge::{BridgeSampler, BridgeSkeleton};
use crate::error::{Error, Result};
use crate::likelihood::{contribution_estimate, ContributionDraws};
use crate::model::{CoupledModel, CoupledParams, SelectionModel};
use crate::neutral::NeutralKernel;
use crate::numerics::Numerics;

/// Interaction drift `G^k(x) = x^k(1-x^k) V^k(x)` for full coupled parameters.
pub fn coupling_term(x: &[f64], params: &CoupledParams) -> Vec<f64> {
    let loci = params.loci();
    (0..loci)
        .map(|k| {
            let mut v = params.s[k][0] - params.s[k][1];
            for l in 0..loci {
                if l == k {
                    continue;
                }
                let h = &params.h[k][l];
                v += (h[0][1] - h[1][1]) + (h[0][0] - h[0][1] - h[1][0] + h[1][1]) * x[l];
            }
            x[k] * (1.0 - x[k]) * v
        })
        .collect()
}

/// Independent neutral bridges, one per locus, all observed at `times`.
/// Loci are sampled in order from the same stream.
pub fn joint_bridge_sample<R: Rng + ?Sized>(
    x: &[f64],
    y: &[f64],
    t: f64,
    times: &[f64],
    kernel: &NeutralKernel,
    numerics: &Numerics,
    rng: &mut R,
) -> Result<Vec<BridgeSkeleton>> {
    if x.len() != y.len() {
        return Err(Error::arg("bridge endpoints differ in dimension"));
    }
    let sampler = BridgeSampler::new(kernel, numerics);
    x.iter()
        .zip(y)
        .map(|(&xk, &yk)| sampler.sample_skeleton(xk, yk, t, times, rng))
        .collect()
}

/// Likelihood contribution of one increment for a block of coupled loci:
/// endpoint factor in `Ã` and `φ̃⁻`, the per-locus product of neutral density
/// estimates and the joint thinning product over the shared Poisson times.
pub fn coupled_contribution(draws: &ContributionDraws, model: &CoupledModel, theta: &[f64]) -> Result<f64> {
    if draws.x.len() != model.loci() {
        return Err(Error::arg(format!(
            "draws cover {} loci, model has {}",
            draws.x.len(),
            model.loci()
        )));
    }
    contribution_estimate(draws, model, theta)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::likelihood::FrozenLikelihood;
    use crate::model::{HaploidModel, MutationRates, ParameterDomain};
    use crate::rng::{Purpose, Streams};
    use crate::series::ObservationSeries;

    fn mu() -> MutationRates {
        MutationRates::new(0.02, 0.02).unwrap()
    }

    fn example_params() -> CoupledParams {
        let h01 = [[0.3, -0.2], [0.1, 0.4]];
        let h10 = [[0.3, 0.1], [-0.2, 0.4]];
        let zero = [[0.0; 2]; 2];
        CoupledParams::new(vec![[0.4, 0.1], [0.2, 0.5]], vec![vec![zero, h01], vec![h10, zero]]).unwrap()
    }

    #[test]
    fn coupling_term_values() {
        // symbolic expansion of Σ_r (h^{kl}_{1r} - h^{kl}_{2r}) x^l_r
        let g = coupling_term(&[0.3, 0.6], &example_params());
        assert!((g[0] - 0.0378).abs() < 1e-15 && (g[1] + 0.0864).abs() < 1e-15, "{g:?}");
        let g = coupling_term(&[0.0, 1.0], &example_params());
        assert_eq!(g, vec![0.0, 0.0]);
        let flat = CoupledParams::new(vec![[0.3, 0.3], [0.1, 0.1]], vec![vec![[[0.0; 2]; 2]; 2]; 2]).unwrap();
        assert_eq!(coupling_term(&[0.2, 0.7], &flat), vec![0.0, 0.0]);
        // agrees with the reduced parameterization used by the model
        let m = CoupledModel::new(2, mu()).unwrap();
        let eta = m.eta(&[0.3, 0.6], &example_params().reduce());
        assert!((0.21 * eta[0] - 0.0378).abs() < 1e-15 && (0.24 * eta[1] + 0.0864).abs() < 1e-15);
    }

    #[test]
    fn single_locus_bridge_matches_neutral_sampler() {
        let k = NeutralKernel::new(mu());
        let num = Numerics::default();
        let times = [0.2, 0.5, 0.7];
        let s = Streams::new(4);
        let joint = joint_bridge_sample(&[0.3], &[0.6], 1.0, &times, &k, &num, &mut s.stream(Purpose::Bridge, &[0]))
            .unwrap();
        let single = crate::bridge::sample_bridge_skeleton(
            0.3,
            0.6,
            1.0,
            &times,
            &k,
            &num,
            &mut s.stream(Purpose::Bridge, &[0]),
        )
        .unwrap();
        assert_eq!(joint, vec![single]);
    }

    #[test]
    fn loci_are_uncorrelated() {
        let k = NeutralKernel::new(mu());
        let num = Numerics::default();
        let s = Streams::new(5);
        let n = 4000;
        let mut pairs = Vec::with_capacity(n);
        for i in 0..n {
            let b = joint_bridge_sample(
                &[0.3, 0.4],
                &[0.6, 0.5],
                1.0,
                &[0.5],
                &k,
                &num,
                &mut s.stream(Purpose::Bridge, &[i as u64]),
            )
            .unwrap();
            pairs.push((b[0].values[0], b[1].values[0]));
        }
        let (ma, mb) = (
            pairs.iter().map(|p| p.0).sum::<f64>() / n as f64,
            pairs.iter().map(|p| p.1).sum::<f64>() / n as f64,
        );
        let cov: f64 = pairs.iter().map(|p| (p.0 - ma) * (p.1 - mb)).sum::<f64>() / n as f64;
        let va: f64 = pairs.iter().map(|p| (p.0 - ma).powi(2)).sum::<f64>() / n as f64;
        let vb: f64 = pairs.iter().map(|p| (p.1 - mb).powi(2)).sum::<f64>() / n as f64;
        let r = cov / (va * vb).sqrt();
        assert!(r.abs() < 3.0 / (n as f64).sqrt(), "{r}");
    }

    fn two_locus_series() -> ObservationSeries {
        ObservationSeries::new(
            vec![0.0, 1.0, 2.0, 3.0],
            vec![vec![0.3, 0.7], vec![0.6, 0.4], vec![0.55, 0.2], vec![0.8, 0.35]],
        )
        .unwrap()
    }

    #[test]
    fn unlinked_loci_factorize() {
        let num = Numerics::default();
        let series = two_locus_series();
        let coupled = Arc::new(CoupledModel::new(2, mu()).unwrap());
        let domain = ParameterDomain::new(vec![-0.5, -0.5, 0.0], vec![0.5, 0.5, 0.0]).unwrap();
        let fz = FrozenLikelihood::build(&series, coupled, domain, 60, 8, &num).unwrap();
        assert_eq!(fz.components().len(), 2);
        let hap = Arc::new(HaploidModel::new(mu()));
        let scalar: Vec<FrozenLikelihood> = (0..2)
            .map(|k| {
                FrozenLikelihood::build_labelled(
                    &series.column(k),
                    hap.clone(),
                    ParameterDomain::symmetric(1.0).unwrap(),
                    60,
                    8,
                    &num,
                    &[k],
                )
                .unwrap()
            })
            .collect();
        for (c0, c1) in [(0.0, 0.0), (0.35, -0.2), (-0.5, 0.5)] {
            let joint = fz.log_likelihood(&[c0, c1, 0.0]).unwrap().log_value;
            let sum = scalar[0].log_likelihood(&[2.0 * c0]).unwrap().log_value
                + scalar[1].log_likelihood(&[2.0 * c1]).unwrap().log_value;
            assert!((joint - sum).abs() < 1e-10, "{joint} vs {sum}");
        }
    }

    #[test]
    fn linked_block_contribution() {
        let num = Numerics::default();
        let series = two_locus_series();
        let model = CoupledModel::new(2, mu()).unwrap();
        let domain = ParameterDomain::new(vec![-0.5; 3], vec![0.5; 3]).unwrap();
        let fz = FrozenLikelihood::build(&series, Arc::new(model.clone()), domain, 30, 9, &num).unwrap();
        assert_eq!(fz.components().len(), 1);
        let rec = &fz.records()[0];
        let theta = [0.2, -0.1, 0.3];
        let v = coupled_contribution(rec, &model, &theta).unwrap();
        assert_eq!(v, fz.contribution(0, &theta).unwrap());
        // neutral value is the mean of per-locus density products
        let neutral = coupled_contribution(rec, &model, &[0.0; 3]).unwrap();
        let mean = rec.samples.iter().map(|s| s.density).sum::<f64>() / rec.len() as f64;
        assert_eq!(neutral, mean);
        assert!(coupled_contribution(rec, &CoupledModel::new(3, mu()).unwrap(), &[0.0; 6]).is_err());
    }
}
