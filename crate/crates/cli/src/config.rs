//! Run configuration: a flat TOML file, `--set key=value` overrides and the
//! `WF_SEED` environment variable, validated before anything runs.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use wfexact::inference::{BootstrapUnit, OptimOptions};
use wfexact::model::{CoupledModel, CoupledParams, HaploidModel, MutationRates, ParameterDomain, SelectionModel};
use wfexact::numerics::Numerics;

/// Invalid configuration; maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("config error: {0}")]
pub struct ConfigError(pub String);

fn bad(field: &str, msg: impl std::fmt::Display) -> ConfigError {
    ConfigError(format!("{field}: {msg}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Haploid,
    Coupled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub theta_a: f64,
    #[serde(rename = "theta_A")]
    pub theta_big: f64,
    /// Haploid selection parameter used by `simulate`.
    pub theta: f64,
    /// Coupled selective advantages, `L x 2`.
    pub s: Option<Vec<[f64; 2]>>,
    /// Coupled interactions, `L x L x 2 x 2`; the diagonal is ignored.
    pub h: Option<Vec<Vec<[[f64; 2]; 2]>>>,
    /// Starting frequencies, one per locus; empty means 0.5 everywhere.
    pub x0: Vec<f64>,
    pub n_obs: usize,
    pub dt: f64,
    pub domain_lower: Option<Vec<f64>>,
    pub domain_upper: Option<Vec<f64>>,
    pub n_samples: usize,
    pub seed: u64,
    pub t_min: f64,
    pub bridge_eps: f64,
    pub approx_small_t: bool,
    pub rejection_budget: u64,
    pub xtol: f64,
    pub max_eval: usize,
    pub starts: usize,
    pub bootstrap_b: usize,
    pub bootstrap_unit: BootstrapUnit,
    pub grid_points: usize,
    pub grid_index: usize,
    pub grid_lower: Option<f64>,
    pub grid_upper: Option<f64>,
    pub data: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let num = Numerics::default();
        let opt = OptimOptions::default();
        RunConfig {
            model: ModelKind::Haploid,
            theta_a: 0.02,
            theta_big: 0.02,
            theta: 0.7,
            s: None,
            h: None,
            x0: Vec::new(),
            n_obs: 100,
            dt: 1.0,
            domain_lower: None,
            domain_upper: None,
            n_samples: 100,
            seed: 1,
            t_min: num.t_min,
            bridge_eps: num.bridge_eps,
            approx_small_t: num.approx_small_t,
            rejection_budget: num.rejection_budget,
            xtol: opt.xtol,
            max_eval: opt.max_eval,
            starts: opt.starts,
            bootstrap_b: 50,
            bootstrap_unit: BootstrapUnit::Samples,
            grid_points: 200,
            grid_index: 0,
            grid_lower: None,
            grid_upper: None,
            data: None,
        }
    }
}

/// Parse a `--set` value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    /// Load from an optional file, then apply `WF_SEED` and the overrides.
    pub fn load(path: Option<&Path>, sets: &[String], env_seed: Option<&str>) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let origin = path.map_or_else(|| "<defaults>".to_string(), |p| p.display().to_string());
        let mut cfg: RunConfig = if sets.is_empty() {
            toml::from_str(&text).map_err(|e| ConfigError(format!("{origin}: {e}")))?
        } else {
            let mut table: toml::Table = toml::from_str(&text).map_err(|e| ConfigError(format!("{origin}: {e}")))?;
            for s in sets {
                let (k, v) = s
                    .split_once('=')
                    .ok_or_else(|| ConfigError(format!("--set {s}: expected key=value")))?;
                table.insert(k.trim().to_string(), parse_value(v.trim()));
            }
            RunConfig::deserialize(toml::Value::Table(table)).map_err(|e| ConfigError(format!("--set: {e}")))?
        };
        if let Some(seed) = env_seed {
            cfg.seed = seed
                .trim()
                .parse()
                .map_err(|e| ConfigError(format!("WF_SEED={seed:?}: {e}")))?;
        }
        // explicit seed overrides win over the environment
        for s in sets {
            if let Some(("seed", v)) = s.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
                cfg.seed = v.parse().map_err(|e| bad("seed", e))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn loci(&self) -> usize {
        match self.model {
            ModelKind::Haploid => 1,
            ModelKind::Coupled => self.s.as_ref().map_or(0, Vec::len),
        }
    }

    pub fn mutation(&self) -> Result<MutationRates, ConfigError> {
        MutationRates::new(self.theta_a, self.theta_big).map_err(|e| bad("theta_a/theta_A", e))
    }

    pub fn selection_model(&self) -> Result<Arc<dyn SelectionModel>, ConfigError> {
        let mu = self.mutation()?;
        Ok(match self.model {
            ModelKind::Haploid => Arc::new(HaploidModel::new(mu)),
            ModelKind::Coupled => Arc::new(CoupledModel::new(self.loci(), mu).map_err(|e| bad("s", e))?),
        })
    }

    /// Parameter vector used to simulate.
    pub fn true_params(&self) -> Result<Vec<f64>, ConfigError> {
        match self.model {
            ModelKind::Haploid => Ok(vec![self.theta]),
            ModelKind::Coupled => {
                let (s, h) = (self.s.clone().unwrap_or_default(), self.h.clone().unwrap_or_default());
                Ok(CoupledParams::new(s, h).map_err(|e| bad("h", e))?.reduce())
            }
        }
    }

    pub fn domain(&self) -> Result<ParameterDomain, ConfigError> {
        let n = match self.model {
            ModelKind::Haploid => 1,
            ModelKind::Coupled => CoupledModel::param_count(self.loci()),
        };
        let lower = self.domain_lower.clone().unwrap_or_else(|| vec![-1.0; n]);
        let upper = self.domain_upper.clone().unwrap_or_else(|| vec![1.0; n]);
        if lower.len() != n || upper.len() != n {
            return Err(bad("domain_lower/domain_upper", format!("need {n} entries for this model")));
        }
        ParameterDomain::new(lower, upper).map_err(|e| bad("domain_lower/domain_upper", e))
    }

    pub fn start(&self) -> Vec<f64> {
        if self.x0.is_empty() {
            vec![0.5; self.loci()]
        } else {
            self.x0.clone()
        }
    }

    pub fn numerics(&self) -> Numerics {
        Numerics {
            t_min: self.t_min,
            bridge_eps: self.bridge_eps,
            approx_small_t: self.approx_small_t,
            rejection_budget: self.rejection_budget,
            ..Numerics::default()
        }
    }

    pub fn optim(&self) -> OptimOptions {
        OptimOptions {
            xtol: self.xtol,
            max_eval: self.max_eval,
            starts: self.starts,
        }
    }

    /// Grid end points, defaulting to the domain bounds of the chosen coordinate.
    pub fn grid_range(&self) -> Result<(f64, f64), ConfigError> {
        let d = self.domain()?;
        let i = self.grid_index;
        let lo = self.grid_lower.unwrap_or(d.lower()[i]);
        let hi = self.grid_upper.unwrap_or(d.upper()[i]);
        if !(lo <= hi) || lo < d.lower()[i] || hi > d.upper()[i] {
            return Err(bad(
                "grid_lower/grid_upper",
                format!("[{lo}, {hi}] must lie within [{}, {}]", d.lower()[i], d.upper()[i]),
            ));
        }
        if lo < hi && self.grid_points < 2 {
            return Err(bad("grid_points", "need at least 2 points for a proper range"));
        }
        Ok((lo, hi))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.mutation()?;
        match self.model {
            ModelKind::Haploid => {
                if self.s.is_some() || self.h.is_some() {
                    return Err(bad("s/h", "only used with model = \"coupled\""));
                }
                if !self.theta.is_finite() {
                    return Err(bad("theta", "must be finite"));
                }
            }
            ModelKind::Coupled => {
                if self.s.is_none() || self.h.is_none() {
                    return Err(bad("s/h", "model = \"coupled\" needs both s and h"));
                }
                if self.loci() == 0 {
                    return Err(bad("s", "need at least one locus"));
                }
                self.true_params()?;
            }
        }
        let x0 = self.start();
        if x0.len() != self.loci() {
            return Err(bad("x0", format!("need {} entries, got {}", self.loci(), x0.len())));
        }
        if let Some(v) = x0.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(bad("x0", format!("{v} is not strictly inside (0, 1)")));
        }
        if self.n_obs == 0 {
            return Err(bad("n_obs", "must be at least 1"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(bad("dt", "must be finite and > 0"));
        }
        if self.n_samples == 0 {
            return Err(bad("n_samples", "must be at least 1"));
        }
        if !(self.t_min.is_finite() && self.t_min > 0.0) {
            return Err(bad("t_min", "must be finite and > 0"));
        }
        if !(self.bridge_eps > 0.0 && self.bridge_eps < 1.0) {
            return Err(bad("bridge_eps", "must lie in (0, 1)"));
        }
        if self.rejection_budget == 0 {
            return Err(bad("rejection_budget", "must be at least 1"));
        }
        if !(self.xtol.is_finite() && self.xtol > 0.0) {
            return Err(bad("xtol", "must be finite and > 0"));
        }
        if self.max_eval == 0 {
            return Err(bad("max_eval", "must be at least 1"));
        }
        if self.starts == 0 {
            return Err(bad("starts", "must be at least 1"));
        }
        if self.bootstrap_b < 2 {
            return Err(bad("bootstrap_b", "need at least 2 replicates"));
        }
        let d = self.domain()?;
        if self.grid_index >= d.dim() {
            return Err(bad("grid_index", format!("model has {} parameters", d.dim())));
        }
        if self.grid_points == 0 {
            return Err(bad("grid_points", "must be at least 1"));
        }
        self.grid_range()?;
        Ok(())
    }

    /// Config echo embedded in every output.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_benchmark() {
        let c = RunConfig::load(None, &[], None).unwrap();
        assert_eq!((c.theta, c.theta_a, c.theta_big, c.n_obs, c.dt), (0.7, 0.02, 0.02, 100, 1.0));
        assert_eq!(c.start(), vec![0.5]);
        assert_eq!(c.domain().unwrap(), ParameterDomain::symmetric(1.0).unwrap());
    }

    #[test]
    fn overrides_and_env_seed() {
        let sets = vec!["n_samples=7".to_string(), "bootstrap_unit=observations".to_string()];
        let c = RunConfig::load(None, &sets, Some("42")).unwrap();
        assert_eq!((c.n_samples, c.seed, c.bootstrap_unit), (7, 42, BootstrapUnit::Observations));
        let c = RunConfig::load(None, &["seed=3".to_string()], Some("42")).unwrap();
        assert_eq!(c.seed, 3);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "theta = 0.5\nbogus = 1\n").unwrap();
        let e = RunConfig::load(Some(&p), &[], None).unwrap_err().to_string();
        assert!(e.contains("bogus") && e.contains("line 2"), "{e}");
        std::fs::write(&p, "n_samples = 0\n").unwrap();
        assert!(RunConfig::load(Some(&p), &[], None).unwrap_err().to_string().contains("n_samples"));
        assert!(RunConfig::load(None, &["x0=[1.0]".into()], None).is_err());
        assert!(RunConfig::load(None, &["model=\"coupled\"".into()], None).is_err());
        assert!(RunConfig::load(None, &["grid_lower=-2.0".into()], None).is_err());
        assert!(RunConfig::load(None, &[], Some("abc")).is_err());
    }

    #[test]
    fn coupled_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(
            &p,
            "model = \"coupled\"\ns = [[0.35, 0.0], [-0.2, 0.0]]\n\
             h = [[[[0.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]], [[[0.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]]]\n",
        )
        .unwrap();
        let c = RunConfig::load(Some(&p), &[], None).unwrap();
        assert_eq!(c.loci(), 2);
        assert_eq!(c.true_params().unwrap(), vec![0.35, -0.2, 0.0]);
        assert_eq!(c.domain().unwrap().dim(), 3);
        assert_eq!(c.start(), vec![0.5, 0.5]);
    }
}
