use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ibc_core::app::{dump_matrix, refine_study, run, RunConfig, RunOptions};
use ibc_core::IbcError;

#[derive(Parser)]
#[command(name = "ibc-sim", version, about = "Multi-sector Schrödinger evolution with interior-boundary conditions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check coefficients, assemble and evolve.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long, env = "IBC_SIM_OUT")]
        out: Option<PathBuf>,
        /// Only print the coefficient table and condition check.
        #[arg(long)]
        check_only: bool,
        /// Evolve even if the conditions or Hermiticity fail.
        #[arg(long)]
        force_nonhermitian: bool,
    },
    /// Rerun at successively halved h and dt and report observed orders.
    Refine {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        levels: u32,
    },
    /// Print the assembled operator as `row col re im` lines.
    DumpMatrix {
        #[arg(long)]
        config: PathBuf,
        /// Dump `W H` instead of `H`.
        #[arg(long)]
        weighted: bool,
    },
}

fn execute(cli: Cli) -> Result<(), IbcError> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Run { config, out, check_only, force_nonhermitian } => {
            let cfg = RunConfig::load(&config)?;
            let opts = RunOptions { out_dir: out, check_only, force_nonhermitian };
            run(&cfg, &opts, &mut stdout)?;
        }
        Command::Refine { config, levels } => {
            let cfg = RunConfig::load(&config)?;
            let table = refine_study(&cfg, levels)?;
            write!(stdout, "{table}")?;
        }
        Command::DumpMatrix { config, weighted } => {
            let cfg = RunConfig::load(&config)?;
            stdout.write_all(dump_matrix(&cfg, weighted)?.as_bytes())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
