//! `tke`: ingest facts, build the benchmark, edit and evaluate the reference model.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tke_core::editors::Method;
use tke_core::temporal_kb::Year;

use crate::io::CliError;

#[derive(Parser, Debug)]
#[command(name = "tke", version, about = "Temporal knowledge editing workbench")]
struct Cli {
    /// Run seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON document mirroring the run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a tab-separated fact file and write de-overlapped chains.
    Ingest {
        facts: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Last year of the horizon range.
        #[arg(long)]
        horizon: Option<Year>,
    },
    /// Write a synthetic fact corpus derived from the seed.
    GenCorpus {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        chains: Option<usize>,
    },
    /// Build the SE, ME and EE datasets from chains.
    Build(BuildArgs),
    /// Create a model that knows the model-time fact of every chain.
    InitModel {
        #[arg(long)]
        chains: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Apply every edit of a dataset to one model.
    Edit {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Edit log (JSON lines).
        #[arg(long)]
        log: PathBuf,
        #[command(flatten)]
        editor: EditorArgs,
    },
    /// Score a dataset. With --method each record is edited on a copy of the
    /// model between its question sets; otherwise the model is scored as is.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        aliases: Option<PathBuf>,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long, requires = "method")]
        meto: bool,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Every editor with and without METO on all three datasets.
    RunSuite {
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
    },
    /// Metric deltas between two reports of the same dataset.
    Compare {
        baseline: PathBuf,
        enhanced: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[arg(long)]
    chains: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Re-root chains at the fact this model recalls.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    aliases: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<Year>,
    #[arg(long)]
    no_fake_facts: bool,
    #[arg(long)]
    extension_years: Option<Year>,
}

#[derive(Args, Debug)]
struct EditorArgs {
    #[arg(long)]
    method: Method,
    #[arg(long)]
    meto: bool,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args, Debug, Default)]
struct HyperArgs {
    #[arg(long)]
    cft_steps: Option<usize>,
    #[arg(long)]
    cft_learning_rate: Option<f64>,
    #[arg(long)]
    cft_norm_budget: Option<f64>,
    #[arg(long)]
    r1_max_sweeps: Option<usize>,
    #[arg(long)]
    batch_ridge: Option<f64>,
    #[arg(long)]
    batch_cov_weight: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { code, message }) => {
            eprintln!("tke: {message}");
            ExitCode::from(code)
        }
    }
}
