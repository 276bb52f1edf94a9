use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;

use volcount_cli::{execute, Command, ExperimentSpec, SpecError};

/// Synthetic lesion-count experiments: phantom generation, CNN training,
/// baseline comparison and the agreement, reproducibility, age and
/// interpretability studies.
#[derive(Debug, Parser)]
#[command(name = "volcount", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Experiment spec (JSON); omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the spec's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data preparation and scoring. Training is always
    /// single-threaded; outputs are byte-identical only with 1.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
}

fn run(cli: &Cli) -> Result<()> {
    let mut spec = match &cli.config {
        Some(p) => ExperimentSpec::load(p)?,
        None => ExperimentSpec::default(),
    };
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    let m = execute(cli.command, &spec, &cli.out, cli.threads)?;
    eprintln!(
        "{} finished in {:.1}s; outputs in {}",
        m.command,
        m.wall_clock_seconds,
        cli.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<SpecError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
