//! `kinship` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 internal error. Failures print one JSON line to stderr.

mod commands;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use kinship::retrieval::AggregationPolicy;

#[derive(Debug, Parser)]
#[command(name = "kinship", version, about = "Kinship verification and family retrieval over face embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a family-structured synthetic dataset (manifest, KEB1 embeddings, ground truth).
    GenSynthetic(GenSyntheticArgs),
    /// Sample k positive and k negative validation pairs.
    SamplePairs(SamplePairsArgs),
    /// Pick a decision threshold from labeled pairs and export the ROC curve.
    Calibrate(CalibrateArgs),
    /// Apply a threshold policy to pairs and report accuracy per kin type.
    Verify(VerifyArgs),
    /// Train a linear adapter with a family-classification objective.
    Finetune(FinetuneArgs),
    /// Transform embeddings with a trained adapter.
    Apply(ApplyArgs),
    /// Rank a gallery for each probe subject and report mAP and rank@K.
    Retrieve(RetrieveArgs),
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    /// Output directory; created if missing.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Random seed.
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub families: usize,
    #[arg(long, default_value_t = 2)]
    pub persons_min: usize,
    #[arg(long, default_value_t = 6)]
    pub persons_max: usize,
    #[arg(long, default_value_t = 1)]
    pub images_min: usize,
    #[arg(long, default_value_t = 4)]
    pub images_max: usize,
    /// Embedding dimension.
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Leading coordinates that carry family/person structure.
    #[arg(long, default_value_t = 8)]
    pub signal_dims: usize,
    #[arg(long, default_value_t = 1.0)]
    pub family_spread: f64,
    #[arg(long, default_value_t = 0.3)]
    pub person_spread: f64,
    #[arg(long, default_value_t = 0.2)]
    pub image_noise: f64,
    /// Std of the identity-free coordinates.
    #[arg(long, default_value_t = 1.5)]
    pub distractor_noise: f64,
    /// Families held out into val_manifest.jsonl, probes.jsonl and gallery.jsonl.
    #[arg(long, default_value_t = 0)]
    pub holdout_families: usize,
}

#[derive(Debug, Args)]
pub struct SamplePairsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Pairs per label.
    #[arg(long, default_value_t = 5000)]
    pub k: usize,
    /// Random seed.
    #[arg(long)]
    pub seed: u64,
    /// Output pairs CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("target").required(true).args(["target_fpr", "target_tpr"])))]
pub struct CalibrateArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    /// Manifest mapping image ids to embedding rows.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Highest acceptable false positive rate.
    #[arg(long)]
    pub target_fpr: Option<f64>,
    /// Lowest acceptable true positive rate.
    #[arg(long)]
    pub target_tpr: Option<f64>,
    /// Add a threshold per kin type (requires --target-fpr).
    #[arg(long, conflicts_with = "target_tpr")]
    pub per_type: bool,
    /// Negatives a kin type needs for its own threshold.
    #[arg(long, default_value_t = kinship::calibration::DEFAULT_MIN_COUNT)]
    pub min_count: usize,
    /// Output threshold policy JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Output ROC CSV.
    #[arg(long)]
    pub roc_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    /// Manifest mapping image ids to embedding rows.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Threshold policy JSON.
    #[arg(long)]
    pub policy: PathBuf,
    /// Output predictions CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Output report JSON.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Training manifest.
    #[arg(long, required_unless_present = "print_config")]
    pub manifest: Option<PathBuf>,
    #[arg(long, required_unless_present = "print_config")]
    pub embeddings: Option<PathBuf>,
    /// Training config JSON; unset fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Validation pairs CSV for per-epoch AUC and best-epoch selection.
    #[arg(long)]
    pub val_pairs: Option<PathBuf>,
    /// Manifest resolving validation images [default: --manifest].
    #[arg(long, requires = "val_pairs")]
    pub val_manifest: Option<PathBuf>,
    /// Output KMD1 model.
    #[arg(long, required_unless_present = "print_config")]
    pub out: Option<PathBuf>,
    /// Output training log CSV [default: <out>.log.csv].
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Print the effective config as JSON and exit.
    #[arg(long)]
    pub print_config: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub base_lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: Option<u64>,
    #[arg(long)]
    pub warmup_batches: Option<usize>,
    #[arg(long)]
    pub cooldown_batches: Option<usize>,
    /// Comma-separated 1-based epochs.
    #[arg(long, value_delimiter = ',')]
    pub milestone_epochs: Option<Vec<usize>>,
    #[arg(long)]
    pub milestone_factor: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub output_dim: Option<usize>,
    /// Skip L2 normalization of adapter outputs.
    #[arg(long)]
    pub no_normalize: bool,
    /// Keep the last epoch instead of the best validation epoch.
    #[arg(long)]
    pub keep_last: bool,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    /// KMD1 model.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Output KEB1 embeddings.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// Probe subjects JSONL.
    #[arg(long)]
    pub probes: PathBuf,
    /// Gallery manifest JSONL.
    #[arg(long)]
    pub gallery: PathBuf,
    /// Manifest resolving probe images [default: --gallery].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// mean-embedding, mean or max.
    #[arg(long)]
    pub policy: AggregationPolicy,
    /// Cutoff for rank@K.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Output directory for report.json and per-probe ranking CSVs.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(kinship::Error),
    Internal(String),
}

impl From<kinship::Error> for CliError {
    fn from(e: kinship::Error) -> Self {
        CliError::Data(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    fn to_json_line(&self) -> String {
        let (kind, message) = match self {
            CliError::Usage(m) => ("UsageError", m.clone()),
            CliError::Data(e) => (e.kind(), e.to_string()),
            CliError::Internal(m) => ("InternalError", m.clone()),
        };
        serde_json::json!({ "error": kind, "message": message, "exit_code": self.code() }).to_string()
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenSynthetic(a) => commands::gen_synthetic(a),
        Command::SamplePairs(a) => commands::sample_pairs(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Verify(a) => commands::verify(a),
        Command::Finetune(a) => commands::finetune(a),
        Command::Apply(a) => commands::apply(a),
        Command::Retrieve(a) => commands::retrieve(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let message = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
                .collect::<Vec<_>>()
                .join(" ");
            let message = message.strip_prefix("error: ").unwrap_or(&message).to_string();
            eprintln!("{}", CliError::Usage(message).to_json_line());
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.code())
        }
    }
}
