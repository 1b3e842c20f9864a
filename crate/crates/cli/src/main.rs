//! `heng`: validate networks, simulate blending transport, generate operator
//! datasets, train and evaluate estimators, and answer point queries.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "heng", version, about = "Hydrogen fraction transport and operator learning on pipe networks")]
pub struct Cli {
    /// Seed for every random choice; overrides seeds in config files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check a network file and print the validation report.
    Validate { network: PathBuf },

    /// Run the upwind transport for one scenario and write the snapshot CSV.
    Simulate {
        network: PathBuf,
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },

    /// Sample scenarios, simulate them and write a dataset directory.
    GenDataset {
        network: PathBuf,
        /// Sampling config (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },

    /// Train an estimator on a dataset directory.
    Train(TrainArgs),

    /// Report error metrics of a checkpoint on one dataset split.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        /// Network file; defaults to `<dataset>/network.json`.
        #[arg(long)]
        network: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Metrics JSON path; printed to stdout either way.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Print the clamped estimate at one pipe location and time.
    Query {
        checkpoint: PathBuf,
        network: PathBuf,
        /// JSON array of per-pipe branch inputs.
        branch_inputs: PathBuf,
        #[arg(long)]
        pipe: String,
        /// Position along the pipe in meters.
        #[arg(long)]
        x: f64,
        /// Time in seconds.
        #[arg(long)]
        t: f64,
    },
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    pub dataset: PathBuf,
    /// Network file; defaults to `<dataset>/network.json`.
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// JSON with optional `model` and `training` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Train the multiplicative baseline instead of the graph model.
    #[arg(long)]
    pub baseline: bool,
    /// Continue from a checkpoint up to the configured total epochs.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Total epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

fn run(cli: Cli) -> Result<i32, CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::Validate { network } => commands::validate(&network),
        Command::Simulate { network, scenario, out } => commands::simulate(&network, &scenario, &out).map(|_| 0),
        Command::GenDataset { network, config, out } => {
            commands::gen_dataset(&network, config.as_deref(), &out, seed).map(|_| 0)
        }
        Command::Train(args) => commands::train(&args, seed).map(|_| 0),
        Command::Eval {
            checkpoint,
            dataset,
            network,
            split,
            out,
        } => commands::eval(&checkpoint, &dataset, network.as_deref(), &split, out.as_deref()).map(|_| 0),
        Command::Query {
            checkpoint,
            network,
            branch_inputs,
            pipe,
            x,
            t,
        } => commands::query(&checkpoint, &network, &branch_inputs, &pipe, x, t).map(|_| 0),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
