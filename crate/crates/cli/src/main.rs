//! `crepe` command-line harness.
//!
//! Exit codes: 0 when the command's checks pass, 1 on a validation failure
//! or any other error, 2 when an input file is malformed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crepe::harness::commands::{
    cmd_coeffs, cmd_gradcheck, cmd_mix_sim, cmd_oracle_check, cmd_render, cmd_trace_path, cmd_train_head, CommandReport,
};
use crepe::harness::config::RunConfig;
use crepe::Result;

#[derive(Parser)]
#[command(name = "crepe", version, about = "Curved-ray expected rotary encoding harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; absent fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct WithK {
    #[command(flatten)]
    common: Common,
    /// Breakpoints per interval.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Expected modulation coefficients for every (query frame, source token) pair.
    Coeffs(WithK),
    /// Projected paths of one source frame seen from a query frame, as CSV.
    TracePath(WithK),
    /// Compare expected phasors against a Monte-Carlo oracle.
    OracleCheck(WithK),
    /// Finite-difference checks of the head and radial-loss gradients.
    Gradcheck(Common),
    /// Train one probe head per layer on synthetic features.
    TrainHead(Common),
    /// Simulate the MixForcing schedule and substitution provenance.
    MixSim(Common),
    /// Render the configured scene to RDM1 plus trajectory JSON.
    Render(Common),
}

fn load(common: &Common, k: Option<usize>) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(k) = k {
        cfg.k = k;
    }
    Ok(cfg)
}

fn run(command: &Command) -> Result<CommandReport> {
    match command {
        Command::Coeffs(a) => cmd_coeffs(&load(&a.common, a.k)?, &a.common.out),
        Command::TracePath(a) => cmd_trace_path(&load(&a.common, a.k)?, &a.common.out),
        Command::OracleCheck(a) => cmd_oracle_check(&load(&a.common, a.k)?, &a.common.out),
        Command::Gradcheck(c) => cmd_gradcheck(&load(c, None)?, &c.out),
        Command::TrainHead(c) => cmd_train_head(&load(c, None)?, &c.out),
        Command::MixSim(c) => cmd_mix_sim(&load(c, None)?, &c.out),
        Command::Render(c) => cmd_render(&load(c, None)?, &c.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(report) => {
            let status = if report.pass { "pass" } else { "FAIL" };
            println!("{} {status}", report.command);
            for f in &report.files {
                println!("  wrote {}", f.display());
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
