use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use satsync::config::{parse_config, parse_config_forced};
use satsync::output::{execute, run_suite, RunKind, RunOutcome, RunRequest, SuiteCase};
use satsync::sim::{StateInit, DEFAULT_STEPS};

/// Simulate and certify scale-free synchronization of saturated double integrators.
#[derive(Debug, Parser)]
#[command(name = "satsync", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Directory receiving one subdirectory per run.
    #[arg(long, global = true, default_value = "runs")]
    output_dir: PathBuf,

    /// Seed for the initial states, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run even if certification fails (the report carries a warning banner).
    #[arg(long, global = true)]
    force: bool,

    /// Simulation horizon, overriding the config.
    #[arg(long, global = true)]
    steps: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Certify and simulate a configuration, writing the trajectory CSV.
    Simulate { config: PathBuf },
    /// Only run the certification checks.
    Certify { config: PathBuf },
    /// Run one of the built-in example networks (I, II, III) with gain set 1, 2 or 3.
    Suite { case: String, gains: usize },
    /// Simulate with every tick recorded and write the Lyapunov trace.
    Lyapunov { config: PathBuf },
}

fn report(outcome: &RunOutcome, kind: RunKind) {
    println!("run directory: {}", outcome.dir.display());
    println!("certification: {}", outcome.report.overall());
    for f in &outcome.report.failures {
        println!("  failure: {f}");
    }
    if let Some(m) = &outcome.metrics {
        println!("final sync error: {:e}", m.final_error);
        println!("max |u|: {}", m.max_abs_input);
    }
    if let Some(trace) = &outcome.lyapunov {
        let worst = trace.delta_v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!("h = {}, max dV = {:e}", trace.h, worst);
    }
    if let Some(tr) = &outcome.trajectory {
        for w in &tr.warnings {
            println!("warning: {w}");
        }
    }
    if !outcome.success(kind) {
        println!("run did not pass");
    }
}

fn run_config(cli: &Cli, kind: RunKind, path: &PathBuf) -> Result<bool> {
    let document =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = if cli.force {
        parse_config_forced(&document)
    } else {
        parse_config(&document)
    }
    .with_context(|| format!("in {}", path.display()))?;
    if let Some(steps) = cli.steps {
        cfg.steps = steps;
    }
    if let Some(seed) = cli.seed {
        if matches!(cfg.init.states, StateInit::Explicit { .. }) {
            eprintln!("warning: --seed replaces the explicit initial states");
        }
        cfg = cfg.with_seed(seed);
    }
    let label = path
        .file_stem()
        .map_or_else(|| "run".to_string(), |s| s.to_string_lossy().into_owned());
    let outcome = execute(RunRequest {
        kind,
        config: cfg,
        document: &document,
        output_dir: &cli.output_dir,
        label: &label,
        force: cli.force,
    })?;
    report(&outcome, kind);
    Ok(outcome.success(kind))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { config } => run_config(&cli, RunKind::Simulate, config),
        Command::Certify { config } => run_config(&cli, RunKind::Certify, config),
        Command::Lyapunov { config } => run_config(&cli, RunKind::Lyapunov, config),
        Command::Suite { case, gains } => SuiteCase::parse(case)
            .and_then(|case| {
                run_suite(
                    case,
                    *gains,
                    cli.seed.unwrap_or(satsync::output::SUITE_SEED),
                    cli.steps.unwrap_or(DEFAULT_STEPS),
                    &cli.output_dir,
                    cli.force,
                )
            })
            .map(|outcome| {
                report(&outcome, RunKind::Simulate);
                outcome.success(RunKind::Simulate)
            })
            .map_err(Into::into),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
