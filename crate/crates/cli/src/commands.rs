use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};
use wfexact::inference::{bootstrap_se, maximize_frozen, MleResult};
use wfexact::likelihood::FrozenLikelihood;
use wfexact::rng::{Purpose, Streams};
use wfexact::selftest::{self, Check, Level};
use wfexact::series::ObservationSeries;
use wfexact::exactsim::simulate_path;

use crate::config::{ConfigError, RunConfig};

pub const VERSION: &str = concat!("wfexact ", env!("CARGO_PKG_VERSION"));

/// Bad or unusable dataset; maps to exit code 3.
#[derive(Debug, thiserror::Error)]
#[error("data error: {0}")]
pub struct DataError(pub String);

/// Result text plus whether the run should be reported as a failure.
pub struct Outcome {
    pub text: String,
    pub failed: Option<String>,
}

impl Outcome {
    fn ok(text: String) -> Self {
        Outcome { text, failed: None }
    }
}

fn csv_preamble(cfg: &RunConfig) -> String {
    format!("# {VERSION}\n# config {}\n", cfg.echo())
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

pub fn simulate(cfg: &RunConfig) -> Result<(Outcome, String)> {
    let model = cfg.selection_model()?;
    let theta = cfg.true_params()?;
    let times: Vec<f64> = (1..=cfg.n_obs).map(|i| i as f64 * cfg.dt).collect();
    let mut rng = Streams::new(cfg.seed).stream(Purpose::Simulation, &[0]);
    let path = simulate_path(model.as_ref(), &theta, &cfg.start(), &times, &cfg.numerics(), &mut rng)
        .context("simulation failed; if the rejection budget was hit, raise rejection_budget or shrink |theta|")?;
    let values = path.series.values.iter().flatten();
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let total: u64 = path.proposals.iter().sum();
    let summary = format!(
        "n={} loci={} range=[{lo:.4e}, {hi:.4e}] proposals={total} max_per_step={} acceptance={:.4} approx_points={}",
        path.series.increments(),
        path.series.loci(),
        path.proposals.iter().max().copied().unwrap_or(0),
        path.proposals.len() as f64 / total.max(1) as f64,
        path.approx_points,
    );
    Ok((Outcome::ok(csv_preamble(cfg) + &path.series.to_csv()), summary))
}

pub fn read_series(cfg: &RunConfig) -> Result<ObservationSeries> {
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| ConfigError("data: no dataset given (set data or pass --data)".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| DataError(format!("reading {}: {e}", path.display())))?;
    let series = ObservationSeries::from_csv(&text).map_err(|e| DataError(format!("{}: {e}", path.display())))?;
    if series.loci() != cfg.loci() {
        bail!(DataError(format!(
            "{} has {} loci but the model has {}",
            path.display(),
            series.loci(),
            cfg.loci()
        )));
    }
    if series.increments() == 0 {
        bail!(DataError(format!("{} has no increments", path.display())));
    }
    for i in 0..series.increments() {
        if series.gap(i) < cfg.t_min && !cfg.approx_small_t {
            bail!(DataError(format!(
                "{}: gap {} before time {} is below t_min = {}; set approx_small_t = true to allow it",
                path.display(),
                series.gap(i),
                series.times[i + 1],
                cfg.t_min
            )));
        }
    }
    Ok(series)
}

/// Build the frozen draws, or reuse/write a cache file.
pub fn frozen(cfg: &RunConfig, series: &ObservationSeries, cache: Option<&Path>) -> Result<FrozenLikelihood> {
    let model = cfg.selection_model()?;
    let domain = cfg.domain()?;
    if let Some(p) = cache.filter(|p| p.exists()) {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading cache {}", p.display()))?;
        let f = FrozenLikelihood::from_cache_json(&text, model, domain)
            .map_err(|e| ConfigError(format!("cache {}: {e}", p.display())))?;
        if f.seed() != cfg.seed || f.n_samples() != cfg.n_samples || !f.matches_series(series) {
            bail!(ConfigError(format!(
                "cache {} was written for a different seed, N or dataset",
                p.display()
            )));
        }
        return Ok(f);
    }
    let f = FrozenLikelihood::build(series, model, domain, cfg.n_samples, cfg.seed, &cfg.numerics())?;
    if let Some(p) = cache {
        std::fs::write(p, f.to_cache_json()?).with_context(|| format!("writing cache {}", p.display()))?;
    }
    Ok(f)
}

fn mle_json(cfg: &RunConfig, r: &MleResult, f: &FrozenLikelihood) -> Value {
    json!({
        "theta_hat": r.theta_hat,
        "log_lik": r.log_lik,
        "N": cfg.n_samples,
        "seed": cfg.seed,
        "evaluations": r.evaluations,
        "converged": r.converged,
        "approx_points": f.approx_points(),
        "config": cfg.echo(),
        "version": VERSION,
    })
}

pub fn estimate(cfg: &RunConfig, cache: Option<&Path>) -> Result<Outcome> {
    let series = read_series(cfg)?;
    let f = frozen(cfg, &series, cache)?;
    let r = maximize_frozen(&f, None, &cfg.optim(), cfg.seed)?;
    let text = pretty(&mle_json(cfg, &r, &f));
    let failed = (!r.converged).then(|| format!("optimizer did not converge within {} evaluations", cfg.max_eval));
    Ok(Outcome { text, failed })
}

pub fn loglik_grid(cfg: &RunConfig, cache: Option<&Path>) -> Result<Outcome> {
    let series = read_series(cfg)?;
    let f = frozen(cfg, &series, cache)?;
    let (lo, hi) = cfg.grid_range()?;
    let base = f.domain().center();
    let mut out = csv_preamble(cfg);
    out.push_str("theta,log_lik\n");
    let n = cfg.grid_points;
    for j in 0..n {
        let v = if n == 1 { lo } else { lo + (hi - lo) * j as f64 / (n - 1) as f64 };
        let mut th = base.clone();
        th[cfg.grid_index] = v;
        let l = f.log_likelihood(&th)?.log_value;
        writeln!(out, "{v},{l}").unwrap();
    }
    Ok(Outcome::ok(out))
}

pub fn bootstrap(cfg: &RunConfig, cache: Option<&Path>) -> Result<Outcome> {
    let series = read_series(cfg)?;
    let f = frozen(cfg, &series, cache)?;
    let opts = cfg.optim();
    let r = maximize_frozen(&f, None, &opts, cfg.seed)?;
    let b = bootstrap_se(&f, cfg.bootstrap_b, cfg.bootstrap_unit, cfg.seed, &opts)?;
    let mut v = mle_json(cfg, &r, &f);
    let obj = v.as_object_mut().expect("object");
    obj.insert("B".into(), json!(b.replicates));
    obj.insert("unit".into(), json!(b.unit));
    obj.insert("se".into(), json!(b.se));
    obj.insert("maximizers".into(), json!(b.maximizers));
    obj.insert("replicates_converged".into(), json!(b.converged));
    Ok(Outcome::ok(pretty(&v)))
}

pub fn run_selftest(level: Level, seed: u64) -> Result<Outcome> {
    let checks: Vec<Check> = selftest::run(level, seed)?;
    let name = match level {
        Level::Quick => "quick",
        Level::Full => "full",
    };
    let mut out = format!("# {VERSION}\n# selftest level={name} seed={seed}\n");
    for c in &checks {
        out.push_str(&c.line());
        out.push('\n');
    }
    let failures = checks.iter().filter(|c| !c.passed).count();
    writeln!(out, "{} of {} checks passed", checks.len() - failures, checks.len()).unwrap();
    let failed = (failures > 0).then(|| format!("{failures} self-check(s) failed"));
    Ok(Outcome { text: out, failed })
}
