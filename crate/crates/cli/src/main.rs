use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use reed_cli as commands;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "reed", version, about = "Preference-based RL experiments: PEBBLE with optional REED")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one seed and write metrics.csv, labels_audit.csv and summary.json.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// pebble, pebble_saf, reed_simsiam, reed_contrastive or reference.
        #[arg(long)]
        method: Option<String>,
        /// Score against this reference run directory.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Run every (method, budget, seed) of a grid file.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
    },
    /// Score runs against their reference runs and print the ratio table.
    Evaluate {
        #[arg(long)]
        runs: PathBuf,
    },
    /// Train one seed with a human teacher answering through the labelling service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Directory with the labelling UI bundle.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Print the default configuration as TOML.
    DefaultConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            out,
            method,
            reference,
        } => commands::run(config.as_deref(), seed, &out, method.as_deref(), reference.as_deref()),
        Command::Sweep { grid } => commands::sweep(&grid),
        Command::Evaluate { runs } => commands::evaluate(&runs).map(|table| print!("{table}")),
        Command::Serve {
            config,
            seed,
            out,
            host,
            port,
            static_dir,
        } => commands::serve(config.as_deref(), seed, &out, &format!("{host}:{port}"), static_dir),
        Command::DefaultConfig => {
            print!("{}", reed_core::orchestrator::RunConfig::default().to_toml());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
