use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wbe::{commands, configure_jobs, exit, Command, ExperimentConfig, Result};

#[derive(Parser)]
#[command(name = "wbe", version, about = "Wide-band equivariant inverse scattering experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Generate media and their far fields.
    Gen,
    /// Filtered back-projection baseline.
    Fbp,
    /// Train a model.
    Train,
    /// Evaluate on rotated test sets.
    RotateTest,
    /// Training-set size and frequency sweep.
    Sweep,
    /// Export a tensor as PGM or CSV.
    Export,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Gen => Command::Gen,
            Cmd::Fbp => Command::Fbp,
            Cmd::Train => Command::Train,
            Cmd::RotateTest => Command::RotateTest,
            Cmd::Sweep => Command::Sweep,
            Cmd::Export => Command::Export,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let path = cli
        .config
        .ok_or_else(|| wbe::HarnessError::config("--config <file.json> is required"))?;
    let mut cfg = ExperimentConfig::load(&path)?;
    cfg.apply_env()?;
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    let cmd = Command::from(cli.command);
    cfg.validate_for(cmd)?;
    configure_jobs(cli.jobs)?;
    commands::run(cmd, &cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
