//! `c2c`: generate MNIST bags, train, evaluate, sweep ablations and check
//! gradients.

mod commands;
mod manifest;
mod options;

use std::path::PathBuf;
use std::process::ExitCode;

use c2c::bagdata::DataError;
use c2c::container::ContainerError;
use c2c::diffcore::DiffError;
use c2c::model::ModelError;
use c2c::trainer::TrainError;
use clap::{Parser, Subcommand};

use options::{AblateOptions, EvalOptions, GenDataOptions, GradcheckOptions, TrainOptions};

#[derive(Parser, Debug)]
#[command(name = "c2c", version, about = "Cluster-sampled attention MIL on MNIST bags")]
struct Cli {
    /// Worker threads for clustering and evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a bag dataset from MNIST IDX files.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        opts: GenDataOptions,
    },
    /// Train a model and write a checkpoint plus an epoch log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        opts: TrainOptions,
    },
    /// Score a checkpoint on one split; write metrics and attention CSV.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        opts: EvalOptions,
    },
    /// Train and test once per value of one hyperparameter.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        opts: AblateOptions,
    },
    /// Finite-difference check of the composite loss on a toy problem.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        opts: GradcheckOptions,
    },
    /// Repeat a run from its run.json.
    Rerun {
        manifest: PathBuf,
        /// Write outputs here instead of the recorded location.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Bad flags or config values.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// A numeric check failed (gradient check over tolerance).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct NumericFailure(pub String);

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

fn diff_code(e: &DiffError) -> u8 {
    match e {
        DiffError::NonFinite { .. } => EXIT_NUMERIC,
        _ => EXIT_FAILURE,
    }
}

fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::Checkpoint(_) | ModelError::Io { .. } => EXIT_DATA,
        ModelError::Diff(d) => diff_code(d),
        ModelError::Config(_) | ModelError::Shape(_) => EXIT_USAGE,
    }
}

fn train_code(e: &TrainError) -> u8 {
    match e {
        TrainError::Config(_) => EXIT_USAGE,
        TrainError::Model(m) => model_code(m),
        TrainError::Diff(d) => diff_code(d),
        TrainError::NonFinite { .. } => EXIT_NUMERIC,
        TrainError::Cluster(_) | TrainError::Invariant(_) => EXIT_FAILURE,
        TrainError::Io { .. } | TrainError::Csv { .. } => EXIT_DATA,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<NumericFailure>() {
            return EXIT_NUMERIC;
        }
        if let Some(e) = cause.downcast_ref::<DataError>() {
            return if matches!(e, DataError::Config(_)) {
                EXIT_USAGE
            } else {
                EXIT_DATA
            };
        }
        if cause.is::<ContainerError>() || cause.is::<std::io::Error>() {
            return EXIT_DATA;
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return model_code(e);
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return train_code(e);
        }
        if let Some(e) = cause.downcast_ref::<DiffError>() {
            return diff_code(e);
        }
    }
    EXIT_FAILURE
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::GenData { config, opts } => commands::gen_data(opts.merged(options::read_config(config.as_deref())?)),
        Command::Train { config, opts } => commands::train(opts.merged(options::read_config(config.as_deref())?)),
        Command::Eval { config, opts } => commands::eval(opts.merged(options::read_config(config.as_deref())?)),
        Command::Ablate { config, opts } => commands::ablate(opts.merged(options::read_config(config.as_deref())?)),
        Command::Gradcheck { config, opts } => {
            commands::gradcheck(opts.merged(options::read_config(config.as_deref())?))
        }
        Command::Rerun { manifest, out } => commands::rerun(&manifest, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors often embed their source in their own message.
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
