use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use userdp::harness::{self, Experiment, ExperimentConfig, NoiseMode};
use userdp::Error;

/// User-level DP-SCO experiments and property checks.
#[derive(Parser)]
#[command(name = "userdp", version)]
struct Cli {
    /// Zero every privacy and smoothing noise draw. Reports are stamped non-private.
    #[arg(long, global = true)]
    unsafe_no_noise: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every point of the config's `sweep` grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a battery of property checks: sensitivity, coupling, mean, sparse_vector,
    /// smoothing, concentration, finite_diff, or all.
    Verify {
        suite: String,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the reports as JSONL.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const CHECK_FAILURE: u8 = 1;
const CONFIG_ERROR: u8 = 2;

fn load(
    path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    no_noise: bool,
) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if out.is_some() {
        config.out = out;
    }
    if no_noise {
        config.noise = NoiseMode::Zeroed;
    }
    Ok(config)
}

fn fail(code: u8, err: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.unsafe_no_noise {
        eprintln!("warning: --unsafe-no-noise disables all privacy noise; output is NOT private");
    }
    match cli.command {
        Command::Run { config, seed, out } => {
            let config = match load(&config, seed, out, cli.unsafe_no_noise) {
                Ok(c) => c,
                Err(e) => return fail(CONFIG_ERROR, e),
            };
            let experiment = match Experiment::prepare(&config) {
                Ok(e) => e,
                Err(e) => return fail(CONFIG_ERROR, e),
            };
            let dir = experiment
                .config()
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("out"));
            let report = match experiment.run() {
                Ok(r) => r,
                Err(e) => return fail(CHECK_FAILURE, e),
            };
            if let Err(e) = harness::write_report(&report, &dir) {
                return fail(CHECK_FAILURE, e);
            }
            let a = &report.aggregate;
            println!(
                "{:?} n={} m={} d={} eps={}: excess risk {:.6} +- {:.6} over {} trials, halted {:.1}%{} -> {}",
                report.config.algorithm,
                report.config.n,
                report.config.m,
                report.config.d,
                report.config.epsilon,
                a.mean_excess_risk,
                a.stderr,
                a.repetitions,
                100.0 * a.halted_fraction,
                if report.private { "" } else { " [NOT PRIVATE]" },
                dir.display()
            );
            ExitCode::SUCCESS
        }
        Command::Sweep { config, seed, out } => {
            let config = match load(&config, seed, out, cli.unsafe_no_noise) {
                Ok(c) => c,
                Err(e) => return fail(CONFIG_ERROR, e),
            };
            let points = match config.sweep_points() {
                Ok(p) => p,
                Err(e) => return fail(CONFIG_ERROR, e),
            };
            let mut reports = Vec::with_capacity(points.len());
            for p in &points {
                let experiment = match Experiment::prepare(p) {
                    Ok(e) => e,
                    Err(e) => return fail(CONFIG_ERROR, e),
                };
                match experiment.run() {
                    Ok(r) => {
                        let a = &r.aggregate;
                        println!(
                            "n={} m={} d={} eps={}: {:.6} +- {:.6}",
                            p.n, p.m, p.d, p.epsilon, a.mean_excess_risk, a.stderr
                        );
                        reports.push(r);
                    }
                    Err(e) => return fail(CHECK_FAILURE, e),
                }
            }
            let dir = config.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            if let Err(e) = harness::write_sweep(&reports, &dir) {
                return fail(CHECK_FAILURE, e);
            }
            ExitCode::SUCCESS
        }
        Command::Verify {
            suite,
            trials,
            seed,
            out,
        } => {
            if suite != "all" && !harness::SUITES.contains(&suite.as_str()) {
                return fail(CONFIG_ERROR, format!("unknown suite `{suite}`"));
            }
            let reports = match harness::run_suite(&suite, trials, seed) {
                Ok(r) => r,
                Err(e) => return fail(CHECK_FAILURE, e),
            };
            for r in &reports {
                println!("{}", r.summary());
                for c in &r.components {
                    println!("    {}", c.summary());
                }
            }
            if let Some(path) = out {
                let write = || -> Result<(), Error> {
                    let mut text = String::new();
                    for r in &reports {
                        text.push_str(&serde_json::to_string(r)?);
                        text.push('\n');
                    }
                    std::fs::write(&path, text)?;
                    Ok(())
                };
                if let Err(e) = write() {
                    return fail(CHECK_FAILURE, e);
                }
            }
            if reports.iter().all(|r| r.passed()) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(CHECK_FAILURE)
            }
        }
    }
}
