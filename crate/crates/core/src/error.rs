use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mutation rates theta_a={theta_a}, theta_A={theta_big}: both must be finite and > 0")]
    InvalidMutation { theta_a: f64, theta_big: f64 },

    #[error("invalid parameter domain: {0}")]
    InvalidDomain(String),

    #[error("interaction tensor is not symmetric: h[{k}][{l}][{j}][{r}] = {a} but h[{l}][{k}][{r}][{j}] = {b}")]
    AsymmetricInteraction {
        k: usize,
        l: usize,
        j: usize,
        r: usize,
        a: f64,
        b: f64,
    },

    #[error("time increment {t} is below t_min = {t_min}; pass approx_small_t to use the approximate small-time law")]
    TimeTooSmall { t: f64, t_min: f64 },

    #[error("alternating series for q_{m}(t={t}) did not reach a decreasing regime within {budget} terms")]
    NonConvergence { m: usize, t: f64, budget: usize },

    #[error("bridge mixture tail could not be certified below {eps:e} with m <= {budget}")]
    TruncationBudget { eps: f64, budget: usize },

    #[error("rejection sampler exceeded {budget} proposals ({context}); the phi bounds are probably too loose")]
    RejectionBudget { budget: u64, context: String },

    #[error("state {value} is not strictly inside (0, 1)")]
    BoundaryState { value: f64 },

    #[error("parameter {theta:?} lies outside the domain used to freeze the draws (rate {rate} < spread {spread})")]
    OutsideDomain {
        theta: Vec<f64>,
        rate: f64,
        spread: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures caused by exhausted numerical budgets (series terms,
    /// truncation, rejection) rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::TimeTooSmall { .. }
                | Error::NonConvergence { .. }
                | Error::TruncationBudget { .. }
                | Error::RejectionBudget { .. }
        )
    }
}
