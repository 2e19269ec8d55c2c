//! Command-line entry point for the discourse relation pipeline.
//!
//! One command per process: data preparation and statistics, cascade
//! training, checkpoint evaluation, encoder selection, single-head
//! ablation, LLM benchmarking and report merging. Every run is driven by a
//! TOML config plus `--set` overrides, and writes a resolved-config
//! snapshot and an artifact manifest into its output directory.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::load_config;
use error::CliError;
use manifest::Manifest;

#[derive(Parser)]
#[command(name = "harch", version, about = "Multi-label discourse relation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-sense vote-mass statistics tables
    Stats {
        #[command(flatten)]
        common: CommonArgs,
        /// Level to report (1, 2 or 3); all levels when omitted
        #[arg(long)]
        level: Option<u8>,
    },
    /// Normalize a release corpus into the canonical store
    Prepare {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the hierarchical cascade over multiple seeds
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compare encoder backbones on a held-out split
    EncoderSelect {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Score a saved checkpoint on a corpus split
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train and score single-head models per level
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Few-shot connective-proxy LLM benchmark
    PromptEval {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Merge run reports into one comparison table
    Report {
        /// Run directories containing report.json
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Optional output directory for the merged table
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. --set training.epochs=3
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory for artifacts and the manifest
    #[arg(long)]
    out: PathBuf,
    /// Language filter (codes: eng,ger,fre,cze)
    #[arg(long, value_delimiter = ',')]
    languages: Option<Vec<String>>,
    /// Split override for the command's evaluation
    #[arg(long)]
    split: Option<String>,
    /// Training seeds
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Freeze the encoder backbone during training
    #[arg(long)]
    freeze_encoder: Option<bool>,
    /// Use the deterministic hashing encoder with this dimension (test mode)
    #[arg(long)]
    stub_encoder_dim: Option<usize>,
}

impl CommonArgs {
    /// Renders typed flags as config overrides; `split_key` names the
    /// config entry `--split` addresses for this command (None = rejected).
    fn overrides(&self, split_key: Option<&str>) -> Result<Vec<String>, CliError> {
        let mut sets = self.set.clone();
        if let Some(languages) = &self.languages {
            let quoted: Vec<String> = languages.iter().map(|l| format!("{l:?}")).collect();
            sets.push(format!("corpus.languages=[{}]", quoted.join(", ")));
        }
        if let Some(split) = &self.split {
            match split_key {
                Some(key) => sets.push(format!("{key}={split:?}")),
                None => {
                    return Err(CliError::Config(
                        "--split does not apply to this command".into(),
                    ))
                }
            }
        }
        if let Some(seeds) = &self.seeds {
            let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
            sets.push(format!("training.seeds=[{}]", list.join(", ")));
        }
        if let Some(freeze) = self.freeze_encoder {
            sets.push(format!("training.freeze_encoder={freeze}"));
        }
        if let Some(dim) = self.stub_encoder_dim {
            sets.push(format!("model.encoder=\"stub-{dim}\""));
        }
        Ok(sets)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Report { dirs, out } => return commands::report(&dirs, out.as_deref()),
        Command::Stats { common, level } => {
            with_run(&common, None, |config, manifest| {
                commands::stats(config, manifest, level)
            })
        }
        Command::Prepare { common } => {
            with_run(&common, None, |config, manifest| {
                commands::prepare(config, manifest)
            })
        }
        Command::Train { common } => {
            with_run(&common, Some("training.eval_split"), |config, manifest| {
                commands::train(config, manifest)
            })
        }
        Command::EncoderSelect { common } => {
            with_run(&common, Some("encoder_select.split"), |config, manifest| {
                commands::encoder_select(config, manifest)
            })
        }
        Command::Evaluate { common } => {
            with_run(&common, Some("evaluate.split"), |config, manifest| {
                commands::evaluate_cmd(config, manifest)
            })
        }
        Command::Ablate { common } => {
            with_run(&common, Some("training.eval_split"), |config, manifest| {
                commands::ablate(config, manifest)
            })
        }
        Command::PromptEval { common } => {
            with_run(&common, Some("prompting.split"), |config, manifest| {
                commands::prompt_eval(config, manifest)
            })
        }
    }
}

/// Shared run scaffolding: resolve the config (before touching the output
/// directory, so config errors leave no partial outputs), snapshot it, run
/// the command, then seal the manifest.
fn with_run<F>(common: &CommonArgs, split_key: Option<&str>, body: F) -> Result<(), CliError>
where
    F: FnOnce(&config::FileConfig, &mut Manifest) -> Result<(), CliError>,
{
    let sets = common.overrides(split_key)?;
    let (config, resolved) = load_config(&common.config, &sets)?;
    let mut manifest = Manifest::new(&common.out)?;
    manifest.write("resolved-config.toml", "config", resolved.as_bytes())?;
    body(&config, &mut manifest)?;
    manifest.finish()
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse(); // exits 2 on usage errors
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
