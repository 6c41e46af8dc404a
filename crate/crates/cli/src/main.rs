//! `hvc`: train, evaluate and ensemble branching HVC networks.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hvc_core::{Error, ErrorClass};

#[derive(Parser, Debug)]
#[command(name = "hvc", version, about = "Branching CNNs with homogeneous vector capsules")]
#[command(after_help = hvc_core::config::keys_help())]
struct Cli {
    /// Worker threads for every pool; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

/// Configuration file plus `key=value` overrides; later settings win.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Run configuration file (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network; writes metrics.log, best.ckpt and last.ckpt to the output directory.
    #[command(after_help = hvc_core::config::keys_help())]
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// MNIST directory (overrides `data_dir`).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory (overrides `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed (overrides `seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Total epochs (overrides `epochs`).
        #[arg(long)]
        epochs: Option<u64>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Report test accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Use the raw weights instead of their moving average.
        #[arg(long)]
        raw: bool,
        /// Evaluate only the first N test images.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value_t = 100)]
        batch: usize,
    },
    /// Write a freshly initialised checkpoint.
    Init {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate several checkpoints and store their predictions as a matrix file.
    DumpPreds {
        #[arg(long, num_args = 1.., required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value_t = 100)]
        batch: usize,
    },
    /// Print the parameter table of a network variant.
    #[command(after_help = hvc_core::config::keys_help())]
    Params {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// hvc-z, hvc-xy or fc.
        #[arg(long)]
        head: Option<String>,
        #[arg(long)]
        branches: Option<usize>,
        /// not-learnable, random-init or ones-init.
        #[arg(long)]
        merge: Option<String>,
    },
    /// Write original and augmented training images as PGM files.
    AugmentPreview {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        epoch: u64,
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// full, translate-2px, translate-margin or none.
        #[arg(long, default_value = "full")]
        strategy: String,
    },
    /// Majority-vote analysis of a prediction matrix.
    #[command(subcommand)]
    Ensemble(EnsembleCommand),
}

#[derive(Subcommand, Debug)]
enum EnsembleCommand {
    /// Count model subsets by majority-vote accuracy.
    Count {
        #[arg(long)]
        matrix: PathBuf,
        /// all, odd, at-least-2, or a size range such as 3-7.
        #[arg(long, default_value = "at-least-2")]
        sizes: String,
        /// Comma-separated accuracy thresholds in percent, e.g. 99.80,99.82.
        #[arg(long, value_delimiter = ',')]
        thresholds: Vec<String>,
        /// lowest-class or first-model.
        #[arg(long, default_value = "lowest-class")]
        tie_break: String,
        /// Estimate from this many random subsets instead of enumerating.
        #[arg(long)]
        sample: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Accuracy of one ensemble.
    Vote {
        #[arg(long)]
        matrix: PathBuf,
        /// Comma-separated model indices; all models when omitted.
        #[arg(long, value_delimiter = ',')]
        models: Vec<usize>,
        #[arg(long, default_value = "lowest-class")]
        tie_break: String,
    },
    /// Samples the models disagree on or mostly get wrong.
    Troublesome {
        #[arg(long)]
        matrix: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn run(cli: Cli) -> hvc_core::Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Train {
            cfg,
            data,
            out,
            seed,
            epochs,
            resume,
        } => commands::train(&cfg, data, out, seed, epochs, resume),
        Command::Eval {
            checkpoint,
            data,
            raw,
            limit,
            batch,
        } => commands::eval(&checkpoint, &data, !raw, limit, batch),
        Command::Init { cfg, out, seed } => commands::init(&cfg, &out, seed),
        Command::DumpPreds {
            checkpoints,
            data,
            out,
            raw,
            limit,
            batch,
        } => commands::dump_preds(&checkpoints, &data, &out, !raw, limit, batch),
        Command::Params {
            cfg,
            head,
            branches,
            merge,
        } => commands::params(&cfg, head, branches, merge),
        Command::AugmentPreview {
            data,
            out,
            seed,
            epoch,
            count,
            strategy,
        } => commands::augment_preview(&data, &out, seed, epoch, count, &strategy),
        Command::Ensemble(e) => match e {
            EnsembleCommand::Count {
                matrix,
                sizes,
                thresholds,
                tie_break,
                sample,
                seed,
            } => commands::ensemble_count(&matrix, &sizes, &thresholds, &tie_break, sample, seed),
            EnsembleCommand::Vote {
                matrix,
                models,
                tie_break,
            } => commands::ensemble_vote(&matrix, &models, &tie_break),
            EnsembleCommand::Troublesome { matrix } => commands::ensemble_troublesome(&matrix),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
