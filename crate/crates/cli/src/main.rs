use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spt_lab_cli::{run_file, Overrides};

#[derive(Parser)]
#[command(name = "spt-lab", version, about = "Simulation experiments on diverse equity markets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: Option<String>,
        /// Number of Monte Carlo paths.
        #[arg(long, allow_negative_numbers = true)]
        paths: Option<i64>,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Grid steps (`n_geometric` for geometric grids).
        #[arg(long, allow_negative_numbers = true)]
        steps: Option<i64>,
        /// Worker threads.
        #[arg(long)]
        threads: Option<i64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            paths,
            seed,
            steps,
            threads,
        } => {
            let o = Overrides {
                out,
                paths,
                seed,
                steps,
                threads,
            };
            ExitCode::from(run_file(&config, &o).code() as u8)
        }
    }
}
