//! Acceptance suite: one PASS/FAIL line per criterion, with the measured
//! statistics indented below it.
//!
//! Runs as part of `cargo test`. It reports and exits 0 so the workspace
//! suite stays usable; set `WF_ACCEPTANCE_STRICT=1` to exit nonzero when any
//! criterion fails. A panic or library error always fails the run.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use wfexact::selftest::{self, Check};

struct Outcome {
    name: &'static str,
    checks: Vec<Check>,
    elapsed: Duration,
    limit: Duration,
    notes: Vec<String>,
}

impl Outcome {
    fn passed(&self) -> bool {
        self.elapsed <= self.limit && self.checks.iter().all(|c| c.passed)
    }

    fn report(&self) {
        println!(
            "{} {} ({:.1} s, limit {} s)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.elapsed.as_secs_f64(),
            self.limit.as_secs()
        );
        for c in &self.checks {
            println!("    {}", c.line());
        }
        for n in &self.notes {
            println!("    {n}");
        }
    }
}

fn timed(
    name: &'static str,
    limit_s: u64,
    f: impl FnOnce() -> wfexact::Result<(Vec<Check>, Vec<String>)>,
) -> Outcome {
    let t = Instant::now();
    let (checks, notes) = f().unwrap_or_else(|e| panic!("{name}: {e}"));
    Outcome {
        name,
        checks,
        elapsed: t.elapsed(),
        limit: Duration::from_secs(limit_s),
        notes,
    }
}

const SEED: u64 = 1;

fn wfexact(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_wfexact"))
        .args(args)
        .current_dir(dir)
        .env_remove("WF_SEED")
        .output()
        .expect("run wfexact");
    assert!(
        out.status.success(),
        "wfexact {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

/// Every command, run twice single-threaded and once with 8 threads.
fn determinism() -> wfexact::Result<(Vec<Check>, Vec<String>)> {
    let dir = tempfile::tempdir()?;
    let d = dir.path();
    std::fs::write(
        d.join("coupled.toml"),
        "model = \"coupled\"\n\
         s = [[0.35, 0.0], [-0.2, 0.0]]\n\
         h = [[[[0.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]], [[[0.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]]]\n\
         n_obs = 20\n\
         n_samples = 20\n\
         domain_lower = [-0.5, -0.5, 0.0]\n\
         domain_upper = [0.5, 0.5, 0.0]\n",
    )?;
    std::fs::write(d.join("bench.csv"), wfexact(d, &["--threads", "1", "simulate"]))?;
    std::fs::write(
        d.join("coupled.csv"),
        wfexact(d, &["--threads", "1", "simulate", "--config", "coupled.toml"]),
    )?;
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("simulate", vec!["simulate"]),
        ("simulate coupled", vec!["simulate", "--config", "coupled.toml"]),
        ("estimate", vec!["estimate", "--data", "bench.csv"]),
        (
            "estimate coupled",
            vec!["estimate", "--config", "coupled.toml", "--data", "coupled.csv"],
        ),
        ("loglik-grid", vec!["loglik-grid", "--data", "bench.csv"]),
        (
            "bootstrap",
            vec!["bootstrap", "--data", "bench.csv", "--replicates", "10", "--set", "n_samples=30"],
        ),
        (
            "bootstrap observations",
            vec![
                "bootstrap",
                "--data",
                "bench.csv",
                "--replicates",
                "10",
                "--bootstrap-unit",
                "observations",
                "--set",
                "n_samples=30",
            ],
        ),
        ("selftest", vec!["selftest", "quick"]),
    ];
    let mut checks = Vec::new();
    for (name, args) in commands {
        let run = |threads: &str| {
            let mut a = vec!["--threads", threads];
            a.extend(&args);
            wfexact(d, &a)
        };
        let (a, b, c) = (run("1"), run("1"), run("8"));
        let differing = usize::from(a != b) + usize::from(a != c);
        checks.push(Check::at_most(
            format!("{name}: byte-identical output"),
            differing as f64,
            0.0,
            format!("{} bytes; runs differing from the first: {differing} of 2", a.len()),
        ));
    }
    Ok((checks, vec![]))
}

fn main() {
    let mut outcomes = Vec::new();

    outcomes.push(timed("ancestral sampler exactness", 30, || {
        Ok((selftest::ancestral_exactness(100_000, SEED)?, vec![]))
    }));
    outcomes.last().unwrap().report();

    outcomes.push(timed("density estimator unbiasedness", 60, || {
        Ok((selftest::density_unbiasedness(10, 10_000, SEED)?, vec![]))
    }));
    outcomes.last().unwrap().report();

    outcomes.push(timed("bridge marginal law", 60, || {
        Ok((vec![selftest::bridge_midpoint(10_000, SEED)?], vec![]))
    }));
    outcomes.last().unwrap().report();

    outcomes.push(timed("Girsanov unit mass", 120, || {
        Ok((vec![selftest::unit_mass(100_000, SEED)?], vec![]))
    }));
    outcomes.last().unwrap().report();

    outcomes.push(timed("neutral reduction", 10, || {
        Ok((vec![selftest::neutral_reduction(SEED)?], vec![]))
    }));
    outcomes.last().unwrap().report();

    outcomes.push(timed("Monte Carlo consistency trend", 1800, || {
        let (c, rows, checks) = selftest::consistency_trend(SEED, &[10, 100, 500], 1000, 50)?;
        let mut notes = vec![format!("benchmark seed {SEED}, domain [-{c}, {c}]")];
        for r in rows {
            notes.push(match r.se {
                Some(se) => format!("N={:<5} theta_hat {:.5} bootstrap SE {:.5}", r.n_samples, r.theta_hat, se),
                None => format!("N={:<5} theta_hat {:.5}", r.n_samples, r.theta_hat),
            });
        }
        Ok((checks, notes))
    }));
    outcomes.last().unwrap().report();

    outcomes.push(timed("coupled factorization", 600, || {
        Ok((selftest::coupled_factorization(SEED, 100, 100, 1e-6)?, vec![]))
    }));
    outcomes.last().unwrap().report();

    outcomes.push(timed("SAM continuity and optimizer validity", 300, || {
        Ok((selftest::sam_continuity(SEED, 100, 200)?, vec![]))
    }));
    outcomes.last().unwrap().report();

    outcomes.push(timed("CLI determinism", 600, determinism));
    outcomes.last().unwrap().report();

    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed()).map(|o| o.name).collect();
    println!("{} of {} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    if !failed.is_empty() {
        println!("failing: {}", failed.join(", "));
        if std::env::var("WF_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
