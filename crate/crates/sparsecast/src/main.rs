use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use sparsecast::commands::{self, Command, Invocation};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Synth,
    Prepare,
    Train,
    Evaluate,
    Ablate,
    Personalize,
}

/// Knowledge-guided sparse-event forecasting: synthesize cohorts, prepare
/// windows, train, evaluate, ablate feature sets and personalize models.
#[derive(Debug, Parser)]
#[command(name = "sparsecast", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Participant ids for `personalize`.
    #[arg(long, value_delimiter = ',')]
    participants: Vec<u32>,
    /// Data directory override (where `synth` writes).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let command = match cli.command {
        Cmd::Synth => Command::Synth,
        Cmd::Prepare => Command::Prepare,
        Cmd::Train => Command::Train,
        Cmd::Evaluate => Command::Evaluate,
        Cmd::Ablate => Command::Ablate,
        Cmd::Personalize => Command::Personalize,
    };
    let inv = Invocation { command, config: cli.config, seed: cli.seed, participants: cli.participants, out: cli.out };
    match commands::run(&inv, &mut std::io::stderr()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
