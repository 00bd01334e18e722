use anyhow::Context;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use proplab::gallery::gallery;
use proplab::run::{compute, Overrides};
use proplab::suites::verify_suite;

#[derive(Parser)]
#[command(name = "proplab", version, about = "Quantum metric space and bundle propinquity lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its report.
    Compute {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Run a property suite: axioms, bridges, tunnels, modular, metrical or chains.
    Verify {
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a gallery scenario: two-point, grid, matrix-dirac, free-module or metrical-scalar.
    Gallery {
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Compute { scenario, out, seed, samples, tol } => {
            let text = std::fs::read_to_string(&scenario).with_context(|| format!("reading {}", scenario.display()))?;
            let report = match compute(&text, &Overrides { seed, samples, tol }) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("{}: {e}", scenario.display());
                    return Ok(2);
                }
            };
            std::fs::write(&out, report.to_json() + "\n").with_context(|| format!("writing {}", out.display()))?;
            print!("{}", report.table());
            Ok(report.exit_code() as u8)
        }
        Command::Verify { suite, seed, out } => {
            let report = verify_suite(&suite, seed)?;
            if let Some(out) = out {
                std::fs::write(&out, report.to_json() + "\n").with_context(|| format!("writing {}", out.display()))?;
            }
            print!("{}", report.table());
            Ok(report.exit_code() as u8)
        }
        Command::Gallery { name, out, seed } => {
            let s = gallery(&name, seed)?;
            std::fs::write(&out, s.to_json() + "\n").with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {}", out.display());
            Ok(0)
        }
    }
}
