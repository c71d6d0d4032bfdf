mod commands;
mod config;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "mitst", version, about = "Glycemic state classification on multi-source irregular time series")]
struct Cli {
    /// TOML or JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root; every command reads and writes below it.
    #[arg(long, global = true, env = "MITST_OUT", default_value = "runs/default")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides one config value, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes a synthetic cohort and its generation manifest.
    Generate,
    /// Splits by patient and fits the normalizer on the training split.
    Preprocess,
    /// Trains and writes a model bundle with templates and bounds.
    Train,
    /// Scores the test split and writes metric reports and curves.
    Evaluate,
    /// Predicts for a request file holding one request or an array of them.
    Predict {
        #[arg(long)]
        request: PathBuf,
        /// Model bundle directory; defaults to `<out>/model`.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Fine-tunes the trained model on a second synthetic task.
    Finetune,
    /// Serves a model bundle over HTTP.
    Serve {
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Runs generate, preprocess, train and evaluate in order.
    Pipeline,
    /// Prints the resolved configuration as TOML.
    Config,
}

/// Bad flags, bad configuration or a missing input: exit code 2.
#[derive(Debug)]
pub struct UsageError(String);

impl UsageError {
    pub fn new(message: impl Into<String>) -> Self {
        UsageError(message.into())
    }
}

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Generate => commands::generate(&cfg, out),
        Command::Preprocess => commands::preprocess(&cfg, out),
        Command::Train => commands::train(&cfg, out),
        Command::Evaluate => commands::evaluate(&cfg, out),
        Command::Predict { request, bundle } => commands::predict(&cfg, out, &request, bundle.as_deref()),
        Command::Finetune => commands::finetune(&cfg, out),
        Command::Serve { bundle } => commands::serve(&cfg, out, bundle.as_deref()),
        Command::Pipeline => {
            commands::generate(&cfg, out)?;
            commands::preprocess(&cfg, out)?;
            commands::train(&cfg, out)?;
            commands::evaluate(&cfg, out)
        }
        Command::Config => {
            print!("{}", toml::to_string(&cfg.display_document())?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
