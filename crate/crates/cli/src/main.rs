use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fparma_cli::{run, CliError, Command, ExperimentConfig};

/// Experiments on functional periodic ARMA processes.
#[derive(Parser)]
#[command(name = "fparma", version)]
struct Args {
    command: Command,
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(&args) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            println!("{}", outcome.message);
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("fparma: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(args: &Args) -> Result<fparma_cli::Outcome, CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    let command = cfg.resolve_command(Some(args.command))?;
    if let Some(seed) = args.seed {
        cfg.master_seed = Some(seed);
    }
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.clone());
    }
    run(command, &cfg)
}
