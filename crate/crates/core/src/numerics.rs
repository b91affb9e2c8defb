use serde::{Deserialize, Serialize};

/// Numerical budgets and thresholds shared by the samplers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Numerics {
    /// Smallest time increment the exact ancestral sampler accepts.
    pub t_min: f64,
    /// Certified tail mass dropped from bridge mixtures.
    pub bridge_eps: f64,
    /// Series terms per `q_m` refinement before giving up.
    pub term_budget: usize,
    /// Largest mixture index considered when certifying tails.
    pub m_budget: usize,
    /// Use the labelled small-time approximation below `t_min` instead of failing.
    pub approx_small_t: bool,
    /// Proposals before a rejection sampler gives up.
    pub rejection_budget: u64,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            t_min: 0.05,
            bridge_eps: 1e-12,
            term_budget: 10_000,
            m_budget: 5_000,
            approx_small_t: false,
            rejection_budget: 1_000_000,
        }
    }
}
