use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use softrtc::cli::{self, ExperimentConfig, SweepAxis};
use softrtc::Result;

#[derive(Parser)]
#[command(name = "softrtc", version, about = "Soft real-time chunking lab")]
struct Args {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML). Defaults apply to omitted sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for evaluation grids.
    #[arg(long, global = true, env = "SOFTRTC_WORKERS")]
    workers: Option<usize>,

    /// Also write frontier scatter data (mean solve and jerk per cell).
    #[arg(long, global = true)]
    plot: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate expert demonstrations.
    GenData,
    /// Train a policy, or fine-tune one given `init_checkpoint`.
    Train,
    /// Evaluate a checkpoint over tasks, delays and episodes.
    Eval,
    /// Evaluate a checkpoint once per window on one sweep axis.
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
    },
    /// Measure chunk-generation latency.
    Bench,
    /// Print the resolved configuration.
    ShowConfig,
}

fn resolve(args: &Args) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(o) = &args.out {
        config.out_dir = o.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(args: &Args) -> Result<()> {
    let config = resolve(args)?;
    let written = match &args.command {
        Command::GenData => cli::gen_data(&config)?,
        Command::Train => cli::with_workers(args.workers, || cli::train(&config))??,
        Command::Eval => cli::eval(&config, args.workers, args.plot)?,
        Command::Sweep { axis } => cli::sweep(&config, *axis, args.workers, args.plot)?,
        Command::Bench => cli::bench(&config)?,
        Command::ShowConfig => {
            print!("{}", config.to_toml());
            Vec::new()
        }
    };
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
