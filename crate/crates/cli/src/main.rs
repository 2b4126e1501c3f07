mod commands;
mod config;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use config::{CliError, CliResult, Settings};

/// Recurrent language models with latent discourse relations: train,
/// evaluate, tag, and verify, all driven by one key-value config file.
#[derive(Parser)]
#[command(name = "drlm", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Key-value config file; command-line flags override its entries.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one config key, repeatable: --set train.dropout=0.3
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Random seed (covers train.seed, synth.seed, gradcheck.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Checkpoint path (paths.checkpoint).
    #[arg(long, global = true, value_name = "PATH")]
    checkpoint: Option<PathBuf>,

    /// Model variant: rnnlm | dclm | drlm | drlm-model2.
    #[arg(long, global = true, value_name = "NAME")]
    variant: Option<String>,

    /// Training objective: joint | conditional.
    #[arg(long, global = true, value_name = "NAME")]
    objective: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write the best-dev-epoch checkpoint.
    Train,
    /// Perplexity of a checkpoint on a corpus, relations summed out.
    EvalLm,
    /// Tag documents with most-probable relations and score them.
    Tag,
    /// Check analytic gradients against finite differences (tiny dims).
    Gradcheck,
    /// Generate a synthetic corpus with planted relation structure.
    Synth,
    /// Sweep embedding and hidden sizes; keep the best dev model.
    Grid,
}

fn build_settings(cli: &Cli) -> CliResult<Settings> {
    let mut settings = Settings::new();
    if let Some(path) = &cli.config {
        settings.load_file(path)?;
    }
    for spec in &cli.set {
        settings.apply_set(spec)?;
    }
    // dedicated flags are the most explicit statement, so they win last
    if let Some(seed) = cli.seed {
        let text = seed.to_string();
        settings.set("train.seed", text.clone())?;
        settings.set("synth.seed", text.clone())?;
        settings.set("gradcheck.seed", text)?;
    }
    if let Some(path) = &cli.checkpoint {
        settings.set("paths.checkpoint", path.display().to_string())?;
    }
    if let Some(name) = &cli.variant {
        settings.set("model.variant", name.clone())?;
    }
    if let Some(name) = &cli.objective {
        settings.set("train.objective", name.clone())?;
    }
    Ok(settings)
}

fn run(cli: &Cli) -> CliResult<()> {
    let settings = build_settings(cli)?;
    match cli.command {
        Cmd::Train => commands::cmd_train(&settings),
        Cmd::EvalLm => commands::cmd_eval_lm(&settings),
        Cmd::Tag => commands::cmd_tag(&settings),
        Cmd::Gradcheck => commands::cmd_gradcheck(&settings),
        Cmd::Synth => commands::cmd_synth(&settings),
        Cmd::Grid => commands::cmd_grid(&settings),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
    }
}
