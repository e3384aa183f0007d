mod commands;
mod config;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iitnet::evaluation::Protocol;
use iitnet::ingest::DatasetKind;
use iitnet::model::ModelKind;
use iitnet::Error;

#[derive(Debug, Parser)]
#[command(name = "iitnet", version, about = "Sleep stage scoring from single-channel EEG")]
pub struct Cli {
    /// Less logging (-q warnings only, -qq errors only)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    quiet: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset directory: raw recordings, or a cache directory written by `synth`
    #[arg(long)]
    pub data: PathBuf,
    /// sleepedf, mass, shhs or generic
    #[arg(long)]
    pub dataset: Option<DatasetKind>,
    /// Signal label, or "A - B" for a bipolar derivation
    #[arg(long)]
    pub channel: Option<String>,
    /// Target sampling rate in Hz
    #[arg(long)]
    pub rate: Option<f64>,
    /// List unreadable recordings and carry on instead of aborting
    #[arg(long)]
    pub skip_bad: bool,
    /// TOML file layered over the built-in defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root of the ingestion cache
    #[arg(long, env = "IITNET_CACHE_DIR", default_value = ".iitnet-cache")]
    pub cache_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// iitnet, e2e-dsn or e2e-intra-dsn
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// sleepedf, mass, shhs, kfold:K:V or holdout:A:B:C
    #[arg(long)]
    pub protocol: Option<Protocol>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Evaluations without validation-cost improvement before stopping
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_passes: Option<usize>,
    /// Wall-clock cap per fold, checked after each evaluation
    #[arg(long)]
    pub max_seconds: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct RecordingArgs {
    /// Checkpoint written by `train` or `experiment`
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// EDF recording (sidecar annotations found by the dataset adapter) or a `.iitc` cache file
    #[arg(long)]
    pub recording: PathBuf,
    #[arg(long)]
    pub dataset: Option<DatasetKind>,
    #[arg(long)]
    pub channel: Option<String>,
    /// Resample a recording whose rate differs from the checkpoint's
    #[arg(long)]
    pub resample: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a dataset into the cache and report per-class epoch counts
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset (cache files, or EDF plus stage sidecars)
    Synth {
        #[arg(long, default_value_t = 8)]
        subjects: usize,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 100.0)]
        rate: f64,
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        /// Fraction of epochs whose stage oscillation is left out
        #[arg(long, default_value_t = 0.0)]
        ambiguity: f64,
        /// sticky:P (self-transition probability P) or iid
        #[arg(long, default_value = "sticky:0.9")]
        kernel: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write EDF files with `.stages.txt` sidecars instead of cache files
        #[arg(long)]
        edf: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate one model over one or more sequence lengths
    Experiment {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Sequence lengths: "4", "1-10" or "1,4,10"
        #[arg(short = 'L', long, default_value = "4")]
        seq_len: String,
        /// Run only these fold ids, e.g. "0,3"
        #[arg(long)]
        folds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on one fold's training and validation subjects
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(short = 'L', long, default_value_t = 4)]
        seq_len: usize,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on labelled data
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated subject ids (default: all)
        #[arg(long)]
        subjects: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the predicted stage of every epoch of one recording
    Predict {
        #[command(flatten)]
        rec: RecordingArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predicted (and expert, when available) hypnogram of one recording
    Hypnogram {
        #[command(flatten)]
        rec: RecordingArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-execute a run from its manifest
    Rerun {
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// 1 usage or configuration, 2 data, 3 training.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Split(_) => 1,
        Error::Training(_) | Error::Fold { .. } | Error::NonFinite(_) | Error::Metrics(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.quiet {
        0 => "info",
        1 => "warn",
        _ => "error",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli.command, std::env::args().skip(1).collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
