mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use failure::Failure;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  configuration or usage error
  3  file system error
  4  schema or data error
  5  numerical failure (singular network, diverged training, all trials failed)

Failures print a JSON object {\"error\": {\"kind\", \"exit_code\", \"message\"}} on stderr.
FAULTLOC_THREADS caps the worker thread count.";

#[derive(Parser, Debug)]
#[command(name = "faultloc", version, about = "Fault location with a learned distance correction", after_help = EXIT_CODES)]
pub struct Cli {
    /// Pipeline config JSON; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Directory holding every intermediate and output file.
    #[arg(long, global = true)]
    pub workdir: Option<PathBuf>,

    /// Training and tuner seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Base locator the model corrects (MM, IMPE, REAC, TAKS, TAKN, TAKZ).
    #[arg(long, global = true)]
    pub locator: Option<String>,

    /// Number of tuning trials.
    #[arg(long, global = true)]
    pub trials: Option<usize>,

    /// Seed list for the stability protocol, e.g. `1-50` or `3,7,11`.
    #[arg(long, global = true)]
    pub seeds: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate the train and test grids into dataset CSVs.
    Simulate,
    /// Add the configured locators' distance estimates to both datasets.
    Estimate,
    /// Extract, select and scale features for the chosen locator.
    Features,
    /// Train one correction model.
    Train,
    /// Search hyperparameters with TPE and cross-validation.
    Tune,
    /// Retrain over the seed list and summarize the test-error spread.
    Stability,
    /// Write the per-group comparison table and error CDFs.
    Evaluate {
        /// Checkpoint to evaluate; `checkpoint.json` in the workdir if present.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Corrected distance for one dataset record, printed as JSON.
    Correct {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset CSV holding the record.
        #[arg(long)]
        input: PathBuf,
        /// Row to use when the file holds more than one.
        #[arg(long)]
        scenario_id: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return Failure::usage(e.to_string()).report(),
    };
    match commands::run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => f.report(),
    }
}
