use std::path::PathBuf;
use std::process::ExitCode;

use adk_cli::commands;
use adk_cli::config::{parse_overrides, RunConfig, SEED_ENV};
use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adk", version, about = "Norm-guided diffusion anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Flags {
    /// `--config <path>` followed by any `--key value` overrides.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "FLAGS")]
    flags: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the procedural toy dataset into the output directory.
    Toy(Flags),
    /// Generate a labeled synthetic dataset from training normals.
    Synth(Flags),
    /// Jointly train the denoiser and segmenter.
    Train(Flags),
    /// Heatmaps and scores for an image or a directory.
    Infer(Flags),
    /// Evaluate a checkpoint on the test split.
    Eval(Flags),
    /// Compare denoising paradigms by forwards and wall-clock time.
    Bench(Flags),
}

fn load(flags: &Flags) -> Result<RunConfig> {
    let mut pairs = parse_overrides(&flags.flags)?;
    let mut file: Option<PathBuf> = None;
    pairs.retain(|(k, v)| {
        if k == "config" {
            file = Some(PathBuf::from(v));
            false
        } else {
            true
        }
    });
    let env = std::env::var(SEED_ENV).ok();
    RunConfig::load(file.as_deref(), &pairs, env.as_deref()).context("loading configuration")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Toy(f) => {
            let dir = commands::command_toy(&load(&f)?)?;
            println!("toy dataset written to {}", dir.display());
        }
        Command::Synth(f) => {
            let manifest = commands::command_synth(&load(&f)?)?;
            println!("manifest: {}", manifest.display());
        }
        Command::Train(f) => {
            let config = load(&f)?;
            let summary = commands::command_train(&config)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Infer(f) => {
            for (path, score) in commands::command_infer(&load(&f)?)? {
                println!("{score:.6}\t{}", path.display());
            }
        }
        Command::Eval(f) => {
            let report = commands::command_eval(&load(&f)?)?;
            print!("{}", report.to_table());
        }
        Command::Bench(f) => {
            commands::command_bench(&load(&f)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
