use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod analyze;
mod config;
mod eval;
mod exit;
mod oracle;
mod train;

/// Train, evaluate and analyze successor-feature disentanglement runs.
#[derive(Parser)]
#[command(name = "dissc", version)]
struct Cli {
    /// Print nothing but the final result.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write its directory.
    Train {
        /// TOML or JSON file with `train` and `env` sections.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one config key; dotted (`train.lr_pi`) or bare (`lr_pi`).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Run directory; defaults to a name under $DISSC_RUN_ROOT or ./runs.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint with greedy and sampled actions.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Config file whose `env` section replaces the stored env.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value_t = 100)]
        episodes: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn a run's metric stream and last checkpoint into CSV tables.
    Analyze {
        run_dir: PathBuf,
        /// Output directory; defaults to `<run_dir>/analysis`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Brute-force scores of a tabular game spec, printed as JSON.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(value: &impl serde::Serialize, out: Option<&PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    if let Some(path) = out {
        std::fs::write(path, text.clone() + "\n")
            .map_err(|e| exit::Failure::io(format!("{}: {e}", path.display())))?;
    }
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            overrides,
            out,
            seed,
        } => {
            let dir = train::cmd_train(&train::TrainArgs {
                config,
                overrides,
                out,
                seed,
                quiet: cli.quiet,
            })?;
            println!("{}", dir.display());
        }
        Command::Eval {
            checkpoint,
            config,
            overrides,
            episodes,
            seed,
            out,
        } => {
            let report = eval::cmd_eval(&eval::EvalArgs {
                checkpoint,
                config,
                overrides,
                episodes,
                seed,
                out: out.clone(),
            })?;
            emit(&report, None)?;
        }
        Command::Analyze { run_dir, out } => {
            let bundle = analyze::cmd_analyze(&run_dir, out.as_deref())?;
            if bundle.corrupt_lines > 0 && !cli.quiet {
                eprintln!("warning: skipped {} corrupt metric lines", bundle.corrupt_lines);
            }
            emit(&bundle, None)?;
        }
        Command::Oracle { config, gamma, out } => {
            let report = oracle::cmd_oracle(&config, gamma)?;
            emit(&report, out.as_ref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_of(&e) as u8)
        }
    }
}
