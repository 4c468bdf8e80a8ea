use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use psqam_core::cli::{exit_code, report_error, run, RunRequest, Subcommand};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    SingleRun,
    RequiredSnr,
    SweepLinewidth,
    SweepPilot,
    ComparePolicies,
    OptimizeGains,
    ExportConstellation,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::SingleRun => Subcommand::SingleRun,
            Command::RequiredSnr => Subcommand::RequiredSnr,
            Command::SweepLinewidth => Subcommand::SweepLinewidth,
            Command::SweepPilot => Subcommand::SweepPilot,
            Command::ComparePolicies => Subcommand::ComparePolicies,
            Command::OptimizeGains => Subcommand::OptimizeGains,
            Command::ExportConstellation => Subcommand::ExportConstellation,
        }
    }
}

/// Monte Carlo laser phase-noise tolerance of uniform and shaped QAM.
#[derive(Debug, Parser)]
#[command(name = "psqam", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,

    /// JSON experiment config; defaults apply when omitted.
    #[arg(long, env = "PSQAM_CONFIG")]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, env = "PSQAM_OUT", default_value = "out")]
    out: PathBuf,

    /// Master seed, overriding the config.
    #[arg(long, env = "PSQAM_SEED")]
    seed: Option<u64>,

    /// Worker threads (default: available parallelism).
    #[arg(long, env = "PSQAM_WORKERS")]
    workers: Option<usize>,

    /// Write per-run PLL traces.
    #[arg(long, env = "PSQAM_DEBUG_TRACE")]
    debug_trace: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let req = RunRequest {
        subcommand: args.command.into(),
        config_path: args.config,
        out_dir: args.out,
        seed: args.seed,
        workers: args.workers,
        debug_trace: args.debug_trace,
    };
    match run(&req) {
        Ok(manifest) => {
            println!("{}: wrote results to {}", manifest.subcommand, manifest.out_dir);
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", report_error(&err, Some(&req.out_dir)));
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
