//! The `uax` command line: argument parsing, run directories and the
//! subcommands chaining data → training → crafting → evaluation.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for runtime or data
//! errors.

mod commands;
mod config;
mod manifest;

pub use config::RunConfig;
pub use manifest::{sha256_file, FileRecord, RunDir, RunManifest, StageTiming, MANIFEST_FILE};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::builder::{PossibleValuesParser, TypedValueParser as _};
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::attack::{AttackError, Norm, ProjectionSchedule, Sampling};
use crate::dataset::DatasetError;
use crate::extractor::{Arch, ModelError};
use crate::metrics::{Metric, MetricsError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("path does not exist: {}", .0.display())]
    MissingPath(PathBuf),
    #[error("{0}")]
    Selection(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Parser)]
#[command(name = "uax", version, about = "Craft and evaluate universal adversarial spoofing examples")]
pub struct Cli {
    /// JSON run configuration; explicit flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Raise log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic identity gallery split into train/ and test/.
    GenData(GenDataArgs),
    /// Import `<src>/<label>/*.png`, preprocess and split into train/ and test/.
    Ingest(IngestArgs),
    /// Train an embedding network on a gallery directory.
    Train(TrainArgs),
    /// Craft a UAX from one seed image.
    Craft(CraftArgs),
    /// EER threshold, baseline and UAX match rates, score histograms.
    Eval(EvalArgs),
    /// Cross-model transfer matrix.
    Transfer(TransferArgs),
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be positive and finite, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn unit_fraction(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        Ok(v) => Err(format!("must lie strictly between 0 and 1, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn arch_parser() -> impl clap::builder::TypedValueParser<Value = Arch> {
    PossibleValuesParser::new(Arch::ALL.map(Arch::id)).map(|s| s.parse::<Arch>().expect("listed arch id"))
}

fn metric_parser() -> impl clap::builder::TypedValueParser<Value = Metric> {
    PossibleValuesParser::new(["euclidean", "cosine"]).map(|s| s.parse::<Metric>().expect("listed metric"))
}

fn norm_parser() -> impl clap::builder::TypedValueParser<Value = Norm> {
    PossibleValuesParser::new(["inf", "2"]).map(|s| s.parse::<Norm>().expect("listed norm"))
}

fn projection_parser() -> impl clap::builder::TypedValueParser<Value = ProjectionSchedule> {
    PossibleValuesParser::new(["every", "final"]).map(|s| {
        if s == "final" {
            ProjectionSchedule::FinalOnly
        } else {
            ProjectionSchedule::EveryIteration
        }
    })
}

fn sampling_parser() -> impl clap::builder::TypedValueParser<Value = Sampling> {
    PossibleValuesParser::new(["uniform", "stratified"]).map(|s| {
        if s == "stratified" {
            Sampling::Stratified
        } else {
            Sampling::Uniform
        }
    })
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub identities: Option<usize>,
    /// Images per identity.
    #[arg(long)]
    pub images: Option<usize>,
    /// Image side length in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    /// Fraction of identities in the train gallery.
    #[arg(long, value_parser = unit_fraction)]
    pub split: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Root holding one directory of PNG files per identity.
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long, value_parser = unit_fraction)]
    pub split: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub channels: u8,
    #[arg(long, default_value_t = crate::dataset::FACE_SIZE)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = arch_parser())]
    pub arch: Option<Arch>,
    /// Gallery directory (`<label>/*.png`).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_parser = positive_f64)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub channels: u8,
    #[arg(long, default_value_t = crate::dataset::FACE_SIZE)]
    pub size: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory, or a `.uaxm` path for the model file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CraftArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Train gallery the batches are drawn from.
    #[arg(long)]
    pub train: PathBuf,
    /// Budget radius ξ in [0, 1] pixel units.
    #[arg(long, value_parser = positive_f64, conflicts_with = "epsilon")]
    pub xi: Option<f64>,
    /// Budget in 8-bit units (ξ = ε / 255).
    #[arg(long, value_parser = positive_f64)]
    pub epsilon: Option<f64>,
    #[arg(long, value_parser = norm_parser())]
    pub norm: Option<Norm>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, value_parser = positive_f64)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// PNG file used as x_A.
    #[arg(long, conflicts_with = "seed_identity")]
    pub seed_image: Option<PathBuf>,
    /// Train identity providing x_A (default: the first identity).
    #[arg(long)]
    pub seed_identity: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed_index: usize,
    #[arg(long, value_parser = metric_parser())]
    pub metric: Option<Metric>,
    #[arg(long, value_parser = projection_parser())]
    pub projection: Option<ProjectionSchedule>,
    #[arg(long, value_parser = sampling_parser())]
    pub sampling: Option<Sampling>,
    /// Id stored as the artifact's source model (default: the arch id).
    #[arg(long)]
    pub model_id: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// UAX artifact directories.
    #[arg(long, required = true, num_args = 1..)]
    pub uax: Vec<PathBuf>,
    /// Train gallery; also calibrates the threshold.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub hist_bins: Option<usize>,
    #[arg(long)]
    pub pair_budget: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = metric_parser())]
    pub metric: Option<Metric>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    /// `ID=PATH` or `PATH` (id taken from the model's arch).
    #[arg(long = "model", required = true, num_args = 1..)]
    pub models: Vec<String>,
    #[arg(long, required = true, num_args = 1..)]
    pub uax: Vec<PathBuf>,
    /// Train gallery: thresholds and the train-side matrix.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub pair_budget: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = metric_parser())]
    pub metric: Option<Metric>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    let shown: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::dispatch(cli, shown) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
