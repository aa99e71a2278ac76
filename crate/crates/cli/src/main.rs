use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mpcontam_cli::{run_and_emit, ExperimentConfig};

#[derive(Parser)]
#[command(name = "mpcontam", version, about = "Contamination-attack experiments on multi-party learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every scenario of an experiment config and write result files.
    Run {
        config: PathBuf,
        /// Replace a config entry, e.g. `--override model.epochs=5`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory; defaults to the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Scenarios run in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run { config, overrides, out, jobs } = cli.command;
    let result = ExperimentConfig::load(&config, &overrides).and_then(|cfg| run_and_emit(&cfg, out.as_deref(), jobs));
    match result {
        Ok(files) => {
            for f in files.all() {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
