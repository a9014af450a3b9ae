use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use rvl::experiment::{run_command, Command, ExperimentConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Synth,
    TrainBackbone,
    SelfLabel,
    TrainLocaliser,
    Eval,
    Sweep,
    Baseline,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Synth => Command::Synth,
            Cmd::TrainBackbone => Command::TrainBackbone,
            Cmd::SelfLabel => Command::SelfLabel,
            Cmd::TrainLocaliser => Command::TrainLocaliser,
            Cmd::Eval => Command::Eval,
            Cmd::Sweep => Command::Sweep,
            Cmd::Baseline => Command::Baseline,
        }
    }
}

/// Radio-visual self-supervised localisation pipeline.
#[derive(Debug, Parser)]
#[command(name = "rvl", version)]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory shared by all stages of a run.
    #[arg(long)]
    out: PathBuf,
    /// Global seed; overrides every seed in the config.
    #[arg(long)]
    seed: u64,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let cfg = match ExperimentConfig::load(&args.config) {
        Ok(c) => c.with_seed(args.seed),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run_command(args.command.into(), &cfg, &args.out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
