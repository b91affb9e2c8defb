//! `wfexact`: exact simulation of Wright-Fisher paths with selection and
//! Monte Carlo maximum likelihood for the selection parameters.
//!
//! Every command reads an optional TOML config (`--config`), applies
//! `WF_SEED` and then `--set key=value` overrides, and embeds the tool
//! version and the full effective config in its output. Outputs depend only
//! on the config and seed, never on `--threads`.
//!
//! Exit codes: 0 success, 1 other failure, 2 config error, 3 data error,
//! 4 numerical failure (a series, truncation or rejection budget ran out, or
//! the optimizer did not converge).

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use wfexact::inference::BootstrapUnit;
use wfexact::selftest::Level;

use commands::{DataError, Outcome};
use config::{ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "wfexact", version, about = "Exact simulation and Monte Carlo MLE for Wright-Fisher diffusions")]
struct Cli {
    /// Worker threads (default: all available cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML config file; missing keys take the benchmark defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set n_samples=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Write the result here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,

    /// Use the labelled approximate law for gaps below t_min.
    #[arg(long)]
    approx_small_t: bool,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Dataset CSV (`time,x1[,x2,...]`); overrides `data` in the config.
    #[arg(long)]
    data: Option<PathBuf>,

    /// Frozen-draw cache: reused when present and matching, written otherwise.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum UnitArg {
    Samples,
    Observations,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LevelArg {
    Quick,
    Full,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a path exactly and write it as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Maximize the frozen Monte Carlo likelihood; writes JSON.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Evaluate the frozen log-likelihood on a grid of one coordinate; writes CSV.
    LoglikGrid {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Number of grid points (config key `grid_points`).
        #[arg(long)]
        points: Option<usize>,
    },
    /// Bootstrap standard errors of the estimate; writes JSON.
    Bootstrap {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// What each replicate resamples (config key `bootstrap_unit`).
        #[arg(long, value_enum)]
        bootstrap_unit: Option<UnitArg>,
        /// Number of replicates (config key `bootstrap_b`).
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Run the statistical self-checks; nonzero exit if any fails.
    Selftest {
        #[arg(value_enum, default_value = "quick")]
        level: LevelArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn load(common: &Common, extra: Vec<String>) -> Result<RunConfig> {
    let mut sets = common.sets.clone();
    if common.approx_small_t {
        sets.push("approx_small_t=true".into());
    }
    sets.extend(extra);
    let env = std::env::var("WF_SEED").ok();
    Ok(RunConfig::load(common.config.as_deref(), &sets, env.as_deref())?)
}

fn data_sets(data: &DataArgs) -> Vec<String> {
    data.data
        .as_ref()
        .map(|p| vec![format!("data={}", toml::Value::String(p.display().to_string()))])
        .unwrap_or_default()
}

fn emit(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<Option<String>> {
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(ConfigError("--threads must be at least 1".into()).into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("starting the thread pool")?;

    let (outcome, output): (Outcome, Option<PathBuf>) = match cli.command {
        Command::Simulate { common } => {
            let cfg = load(&common, vec![])?;
            let (o, summary) = commands::simulate(&cfg)?;
            eprintln!("{summary}");
            (o, common.output)
        }
        Command::Estimate { common, data } => {
            let cfg = load(&common, data_sets(&data))?;
            (commands::estimate(&cfg, data.cache.as_deref())?, common.output)
        }
        Command::LoglikGrid { common, data, points } => {
            let mut extra = data_sets(&data);
            extra.extend(points.map(|n| format!("grid_points={n}")));
            let cfg = load(&common, extra)?;
            (commands::loglik_grid(&cfg, data.cache.as_deref())?, common.output)
        }
        Command::Bootstrap {
            common,
            data,
            bootstrap_unit,
            replicates,
        } => {
            let mut extra = data_sets(&data);
            extra.extend(bootstrap_unit.map(|u| {
                let u = match u {
                    UnitArg::Samples => BootstrapUnit::Samples,
                    UnitArg::Observations => BootstrapUnit::Observations,
                };
                format!("bootstrap_unit={}", serde_json::to_string(&u).expect("unit serializes"))
            }));
            extra.extend(replicates.map(|b| format!("bootstrap_b={b}")));
            let cfg = load(&common, extra)?;
            (commands::bootstrap(&cfg, data.cache.as_deref())?, common.output)
        }
        Command::Selftest { level, seed, output } => {
            let level = match level {
                LevelArg::Quick => Level::Quick,
                LevelArg::Full => Level::Full,
            };
            (commands::run_selftest(level, seed)?, output)
        }
    };
    emit(&outcome.text, output.as_deref())?;
    Ok(outcome.failed)
}

/// Exit code for an error, from the first recognizable cause in its chain.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if cause.is::<DataError>() || cause.is::<wfexact::series::CsvError>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<wfexact::Error>() {
            use wfexact::Error as E;
            return match e {
                E::InvalidMutation { .. } | E::InvalidDomain(_) | E::AsymmetricInteraction { .. } => 2,
                E::BoundaryState { .. } | E::TimeTooSmall { .. } => 3,
                e if e.is_numerical() => 4,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
