use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use viscotomo_cli::{run, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "viscotomo", version, about = "Tensor tomography forward models and viscosity solvers")]
struct Cli {
    /// Worker threads; overrides the `workers` key of the config.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Exit 0 even when an iterative solve stops above tolerance.
    #[arg(long, global = true)]
    allow_unconverged: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Parse and validate a config, then print it in normalized form.
    Check { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run { config } => ExperimentConfig::load(&config).and_then(|cfg| {
            let opts = RunOptions {
                workers: cli.workers,
                allow_unconverged: cli.allow_unconverged,
                output: std::env::var_os(viscotomo_cli::OUTPUT_ENV).map(PathBuf::from),
            };
            run(&cfg, &opts, &mut std::io::stdout())
        }),
        Cmd::Check { config } => ExperimentConfig::load(&config).map(|cfg| print!("{}", cfg.to_toml())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
