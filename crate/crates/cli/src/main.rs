//! Command-line front end for the mvlab studies.
//!
//! Exit status: `0` when every check passes, `2` when a check fails, `1` on
//! configuration or runtime errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mvlab::experiments::{emit_report, run_study, ExperimentConfig, Overrides, RunOptions, Study};

#[derive(Parser, Debug)]
#[command(name = "mvlab", version, about = "Mean-field stochastic evolution equation studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the particle system and report its second moment.
    Simulate(RunArgs),
    /// Coupled errors along a generator family (Yosida or coefficient perturbation).
    TrotterKato(RunArgs),
    /// Small-noise limit against the deterministic equation.
    ZerothOrder(RunArgs),
    /// Drift-family sweeps (bump or scale).
    Parametric(RunArgs),
    /// Dependence on the initial law against the explicit constant.
    Initial(RunArgs),
    /// Frozen moment constant checked on fresh seeds.
    Moments(RunArgs),
    /// Successive distances of the law-map iterates.
    Picard(RunArgs),
    /// Parse and check a configuration without running it.
    ValidateConfig(ConfigArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Master seed (overrides the config).
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Directory for `<subcommand>.csv`; the report goes to stdout otherwise.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Particle count M (overrides the config).
    #[arg(long, value_name = "M")]
    particles: Option<usize>,
    /// Time steps S (overrides the config).
    #[arg(long, value_name = "S")]
    steps: Option<usize>,
    /// Worker threads; results do not depend on this.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> mvlab::Result<u8> {
    let (study, args) = match command {
        Command::ValidateConfig(a) => {
            let cfg = ExperimentConfig::from_path(&a.config)?;
            cfg.validate()?;
            let prob = cfg.build_problem()?;
            println!(
                "ok: d = {}, noise modes = {}, trQ = {}, M = {}, S = {}, T = {}",
                prob.dim(),
                prob.noise.dim(),
                prob.noise.trace_q(),
                prob.particles,
                prob.grid.steps,
                prob.grid.horizon
            );
            return Ok(0);
        }
        Command::Simulate(a) => (Study::Simulate, a),
        Command::TrotterKato(a) => (Study::TrotterKato, a),
        Command::ZerothOrder(a) => (Study::ZerothOrder, a),
        Command::Parametric(a) => (Study::Parametric, a),
        Command::Initial(a) => (Study::Initial, a),
        Command::Moments(a) => (Study::Moments, a),
        Command::Picard(a) => (Study::Picard, a),
    };

    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    cfg.apply_overrides(Overrides {
        seed: args.seed,
        particles: args.particles,
        steps: args.steps,
    });
    let report = run_study(study, &cfg, RunOptions { workers: args.workers })?;

    match &args.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|source| mvlab::Error::Io {
                path: dir.clone(),
                source,
            })?;
            let path = dir.join(format!("{}.csv", study.name()));
            emit_report(&report, &path)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{}", report.to_csv()),
    }
    for row in report.rows.iter().filter(|r| !r.pass) {
        eprintln!("FAIL at {}: {}", row.sweep_param, row.failed.join(", "));
    }
    eprintln!(
        "{}: {} rows, {}",
        study.name(),
        report.rows.len(),
        if report.all_pass() { "all checks pass" } else { "checks failed" }
    );
    Ok(report.exit_code() as u8)
}
