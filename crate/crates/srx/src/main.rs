use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use srx::{certify, homotopy, integrate, nsre_check, CliError, Report, Run, Scenario};

#[derive(Parser)]
#[command(
    name = "srx",
    version,
    about = "Local optimality checks for normal sub-Riemannian extremals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the base trajectory and its tangent flow.
    Integrate(Args),
    /// Test the orthogonal distribution characterization of normal extremals.
    NsreCheck(Args),
    /// Build the natural homotopy and check the variation estimates.
    Homotopy(Args),
    /// Compute the optimality radius and verify it by sampling.
    Certify(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Scenario JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sampling; all cores by default.
    #[arg(long)]
    threads: Option<usize>,
}

type Handler = fn(&Run) -> Result<Report, CliError>;

fn execute(command: Command) -> Result<Report, CliError> {
    let (args, f): (Args, Handler) = match command {
        Command::Integrate(a) => (a, integrate),
        Command::NsreCheck(a) => (a, nsre_check),
        Command::Homotopy(a) => (a, homotopy),
        Command::Certify(a) => (a, certify),
    };
    let scenario = Scenario::load(&args.config)?;
    f(&Run::new(scenario, args.out, args.seed, args.threads))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(report) => {
            println!("{}", report.summary);
            for file in &report.files {
                println!("wrote {}", file.display());
            }
            ExitCode::from(report.status.code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.status.code() as u8)
        }
    }
}
