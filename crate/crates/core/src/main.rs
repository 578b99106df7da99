use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use desatscan::pipeline::{self, Command};

#[derive(Parser)]
#[command(name = "desatscan", version, about = "Detect sleep oxygen desaturations from EEG spectrograms")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seed` from the configuration file.
    #[arg(long)]
    seed: Option<u64>,
    /// Allow `synth` to overwrite a non-empty data directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic cohort into `data_dir`.
    Synth(Common),
    /// Denoise and featurize every staged epoch.
    Preprocess(Common),
    /// Classify subjects per stage.
    Cohort(Common),
    /// Assign subjects to train/test/validation splits.
    Split(Common),
    /// Train one model per split and score the validation split.
    Train(Common),
    /// Aggregate runs into report tables.
    Report(Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { pipeline::EXIT_CONFIG } else { pipeline::EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let (command, common) = match cli.command {
        Cmd::Synth(c) => (Command::Synth, c),
        Cmd::Preprocess(c) => (Command::Preprocess, c),
        Cmd::Cohort(c) => (Command::Cohort, c),
        Cmd::Split(c) => (Command::Split, c),
        Cmd::Train(c) => (Command::Train, c),
        Cmd::Report(c) => (Command::Report, c),
    };
    let result = pipeline::load_config(&common.config, common.seed).and_then(|cfg| pipeline::run(command, &cfg, common.force));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(pipeline::exit_code(&e) as u8)
        }
    }
}
