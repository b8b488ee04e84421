//! `tdens`: run toolkit analyses from JSON spec files.
//!
//! Exit status: 0 success, 2 unreadable or malformed input, 3 violated
//! precondition, 4 a verdict in the report did not hold, 1 anything else.

mod exec;
mod report;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use crate::exec::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    Density,
    Separate,
    Pair,
    Bessel,
    BlowupWitness,
    CqSweep,
    LocalizedMass,
    MassDecay,
    HaarCheck,
    Dichotomy,
    /// Chain several steps from one spec: `{"steps": [{"command": ...}, ...]}`
    Run,
}

#[derive(Debug, Parser)]
#[command(name = "tdens", version, about = "Density, Bessel and (C_q) analyses for systems of translates")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON spec file
    #[arg(long)]
    spec: PathBuf,
    /// Directory for the JSON report and CSV tables; without it the report
    /// goes to stdout and no tables are written
    #[arg(long, env = "TDENS_OUT")]
    out: Option<PathBuf>,
    /// Seed for random test families and sign sampling; overrides the spec
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let name = args
        .command
        .to_possible_value()
        .expect("no skipped variants")
        .get_name()
        .to_string();
    match report::run(&name, &args.spec, args.out.as_deref(), args.seed) {
        Ok(report) => {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            let failed: Vec<_> = report.verdicts.iter().filter(|v| !v.holds).collect();
            for v in &failed {
                eprintln!("verdict failed: {}", v.name);
            }
            if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(4)
            }
        }
        Err(e) => {
            eprintln!("tdens: {e}");
            ExitCode::from(exit_byte(&e))
        }
    }
}

fn exit_byte(e: &CliError) -> u8 {
    e.exit_code() as u8
}
