//! `esrsim`: runs one experiment described by a JSON configuration file and
//! writes its outputs, or replays a result directory.
//!
//! Exit codes: 0 success, 1 replay drift, 2 schema, 3 numeric, 4 I/O.
//! Errors are printed to standard error as a single JSON line.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod error;
mod experiments;
mod manifest;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, Kind};
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "esrsim", version, about = "Pulsed ESR spectrometer simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if needed.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Replace the seed of the configuration.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
#[command(rename_all = "snake_case")]
enum Command {
    Spectrum(RunArgs),
    EchoDecay(RunArgs),
    T1(RunArgs),
    Rabi(RunArgs),
    Cpmg(RunArgs),
    Stats(RunArgs),
    S11Fit(RunArgs),
    CouplingMap(RunArgs),
    StrainMap(RunArgs),
    Sensitivity(RunArgs),
    /// Re-run a result directory and compare its outputs byte for byte.
    Replay {
        dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn threads(common: &Common) -> CliResult<()> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::schema("--threads", "must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Numeric(e.to_string()))?;
    }
    Ok(())
}

fn run_kind(kind: Kind, args: RunArgs) -> CliResult<()> {
    threads(&args.common)?;
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if cfg.experiment != kind {
        return Err(CliError::schema(
            "experiment",
            format!(
                "config describes '{}', subcommand is '{}'",
                cfg.experiment.name(),
                kind.name()
            ),
        ));
    }
    if let Some(s) = args.common.seed_override {
        cfg.seed = s;
    }
    let m = manifest::run_to_dir(&cfg, &args.out)?;
    log::info!("wrote {} files to {}", m.files.len() + 2, args.out.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let (kind, args) = match cli.command {
        Command::Replay { dir, common } => {
            threads(&common)?;
            let report = manifest::replay(&dir, common.seed_override)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            if report.all_match() {
                return Ok(());
            }
            return Err(CliError::Drift(format!(
                "{} deterministic and {} stochastic mismatches",
                report.deterministic_mismatches, report.stochastic_mismatches
            )));
        }
        Command::Spectrum(a) => (Kind::Spectrum, a),
        Command::EchoDecay(a) => (Kind::EchoDecay, a),
        Command::T1(a) => (Kind::T1, a),
        Command::Rabi(a) => (Kind::Rabi, a),
        Command::Cpmg(a) => (Kind::Cpmg, a),
        Command::Stats(a) => (Kind::Stats, a),
        Command::S11Fit(a) => (Kind::S11Fit, a),
        Command::CouplingMap(a) => (Kind::CouplingMap, a),
        Command::StrainMap(a) => (Kind::StrainMap, a),
        Command::Sensitivity(a) => (Kind::Sensitivity, a),
    };
    run_kind(kind, args)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.code() as u8)
        }
    }
}
