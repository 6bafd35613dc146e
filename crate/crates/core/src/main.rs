use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand};

use gbscm::error::Error;
use gbscm::io::{load_config, parse_config, print_config, run, Subcommand};

#[derive(Parser)]
#[command(name = "gbscm", version, about = "Geometry-based stochastic MIMO channel simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Channel coefficients over a time/frequency grid for every link.
    Simulate(Common),
    /// Baseline vs optimized engine timing sweep.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Run the whole sweep, including the large cells.
        #[arg(long)]
        full: bool,
    },
    /// Theoretical and sample spatial covariance of one link.
    Covariance(Common),
    /// Time-average vs ensemble-average convergence of the covariance estimate.
    Convergence(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run config; defaults are used for anything left out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, or a .csv file for single-file outputs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidParameter { .. } => 2,
        Error::Runtime { .. } | Error::Io { .. } => 3,
    }
}

fn execute(sub: Subcommand, common: Common, full: bool) -> Result<(), Error> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path)?,
        None => parse_config("")?,
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    cfg.bench.full |= full;
    if common.print_config {
        print!("{}", print_config(&cfg));
        return Ok(());
    }
    let out = common.out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let summary = run(sub, &cfg, &out)?;
    for p in &summary.outputs {
        println!("{}", p.display());
    }
    println!("{}", summary.manifest.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (sub, common, full) = match cli.command {
        Command::Simulate(c) => (Subcommand::Simulate, c, false),
        Command::Bench { common, full } => (Subcommand::Bench, common, full),
        Command::Covariance(c) => (Subcommand::Covariance, c, false),
        Command::Convergence(c) => (Subcommand::Convergence, c, false),
    };
    match execute(sub, common, full) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
