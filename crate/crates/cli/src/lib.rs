//! Command-line experiments for the kgfuse fact-verification model.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "kgfuse",
    version,
    about = "Knowledge-guided graph fusion experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Override a configuration value by dotted path, e.g. `train.epochs=20`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Output directory; defaults to `runs/<command>`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, hide = true, value_name = "TENSOR=FACTOR")]
    pub corrupt_grad: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset and write train/val/test splits.
    Generate,
    /// Train a model and evaluate it on the test split.
    Train,
    /// Evaluate a checkpoint on the test split.
    Eval,
    /// Train full KGF and its ablations.
    Ablate,
    /// Train all five fusion modules.
    Compare,
    /// Check reverse-mode gradients against finite differences.
    Gradcheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Ablate => "ablate",
            Command::Compare => "compare",
            Command::Gradcheck => "gradcheck",
        }
    }
}

fn parse_corruption(raw: &str) -> Result<(String, f64)> {
    let bad = || CliError::Usage(format!("corruption {raw:?} is not TENSOR=FACTOR"));
    let (name, factor) = raw.split_once('=').ok_or_else(bad)?;
    Ok((name.to_string(), factor.parse().map_err(|_| bad())?))
}

/// Runs a parsed command line and returns the text printed on success.
pub fn run(cli: &Cli) -> Result<String> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config PATH is required".into()))?;
    let cfg = RunConfig::load(path, &cli.overrides)?;
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(cli.command.name()));
    let text = match cli.command {
        Command::Generate => {
            let c = commands::cmd_generate(&cfg, &out)?;
            format!(
                "wrote {} train, {} val, {} test records to {}",
                c.train,
                c.val,
                c.test,
                out.display()
            )
        }
        Command::Train | Command::Eval => {
            let m = if cli.command == Command::Train {
                commands::cmd_train(&cfg, &out)?
            } else {
                commands::cmd_eval(&cfg, &out)?
            };
            format!(
                "test accuracy {:.4}, weighted F1 {:.4} ({} records); outputs in {}",
                m.accuracy,
                m.weighted_f1,
                m.num_records(),
                out.display()
            )
        }
        Command::Ablate => commands::cmd_ablate(&cfg, &out)?.to_table(),
        Command::Compare => commands::cmd_compare(&cfg, &out)?.to_table(),
        Command::Gradcheck => {
            let corrupt = cli
                .corrupt_grad
                .as_deref()
                .map(parse_corruption)
                .transpose()?;
            match commands::cmd_gradcheck(&cfg, &out, corrupt) {
                Ok(summary) => summary.to_table(),
                Err(e) => {
                    if let Ok(table) = std::fs::read_to_string(out.join("gradcheck.txt")) {
                        print!("{table}");
                    }
                    return Err(e);
                }
            }
        }
    };
    Ok(text)
}
