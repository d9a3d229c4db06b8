//! `mixpaste` command-line front end.
//!
//! Every command is a pure function of its flags, input files and seed.
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 I/O error.

mod commands;
mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mixpaste_core::{Error as CoreError, ErrorKind};

pub use commands::{AUGMENTED_ANNOTATIONS, AUGMENTED_IMAGES, AUGMENT_REPORT};

#[derive(Debug, Parser)]
#[command(name = "mixpaste", version, about = "Noisy-annotation dataset tooling for detection")]
pub struct Cli {
    /// TOML file with default values for any flag (flags win).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corrupt category labels and boxes of a clean COCO document.
    InjectNoise(InjectNoiseArgs),
    /// Apply Mix-Paste to a dataset's images.
    Augment(AugmentArgs),
    /// Split detections into neg/fb/pos/pp and compute the suppressed loss.
    Partition(PartitionArgs),
    /// Flag ground-truth boxes poorly covered by class-agnostic detections.
    Probe(ProbeArgs),
    /// Check a COCO document against the dataset invariants.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxModelArg {
    Uniform,
    Gaussian,
}

#[derive(Debug, Args)]
pub struct InjectNoiseArgs {
    #[arg(long)]
    pub ann: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Change log path [default: <out> with extension `changes.json`].
    #[arg(long)]
    pub changelog: Option<PathBuf>,
    /// Category noise rate [default: 0.6].
    #[arg(long)]
    pub pc: Option<f64>,
    /// Box noise rate [default: 0.6].
    #[arg(long)]
    pub pb: Option<f64>,
    /// [default: uniform]
    #[arg(long, value_enum)]
    pub box_model: Option<BoxModelArg>,
    /// Uniform perturbation level [default: 0.3].
    #[arg(long)]
    pub delta: Option<f64>,
    /// Gaussian mean [default: 0].
    #[arg(long, allow_negative_numbers = true)]
    pub mu: Option<f64>,
    /// Gaussian standard deviation [default: 0.1].
    #[arg(long)]
    pub sigma: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub ann: Option<PathBuf>,
    /// Root the document's `file_name`s are relative to.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Output root; receives `images/`, `annotations.json` and `report.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Patches per mix, original included [default: 2].
    #[arg(long)]
    pub k: Option<usize>,
    /// Per-image application probability [default: 0.6].
    #[arg(long)]
    pub apply_prob: Option<f64>,
    /// Smoothing band as a fraction of patch width [default: 0.10].
    #[arg(long)]
    pub beta_frac: Option<f64>,
    /// First Beta parameter of lambda [default: 1].
    #[arg(long)]
    pub lambda_a: Option<f64>,
    /// Second Beta parameter of lambda [default: 1].
    #[arg(long)]
    pub lambda_b: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads [default: available parallelism].
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    /// Ground-truth COCO document.
    #[arg(long)]
    pub ann: Option<PathBuf>,
    /// JSON array of {image_id, bbox, label, score, cls_loss}.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// [default: 0.5]
    #[arg(long)]
    pub iou_thr: Option<f64>,
    /// Box regression loss added to every image's total [default: 0].
    #[arg(long)]
    pub l_bbox: Option<f64>,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub ann: Option<PathBuf>,
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// [default: 0.70]
    #[arg(long)]
    pub iou_cutoff: Option<f64>,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the plain-text table here.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub ann: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        match err.kind() {
            ErrorKind::Io => CliError::Io(err.to_string()),
            ErrorKind::Data => CliError::Data(err.to_string()),
        }
    }
}

/// Runs one command; returns what the process should print and its outcome.
pub fn execute(cli: Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let cfg = config::Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::InjectNoise(args) => commands::inject_noise(args, &cfg, out),
        Command::Augment(args) => commands::augment(args, &cfg, out),
        Command::Partition(args) => commands::partition(args, &cfg, out),
        Command::Probe(args) => commands::probe(args, &cfg, out),
        Command::Validate(args) => commands::validate(args, &cfg, out),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    match execute(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("mixpaste: {}", err.to_string().replace('\n', " "));
            err.exit_code()
        }
    }
}
