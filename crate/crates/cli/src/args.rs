use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "varleak", version, about = "Train privacy-regularized encoders and measure what they leak")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a colored-digit dataset container.
    Generate(GenerateArgs),
    /// Warm up the encoder and utility decoder only.
    Pretrain(PretrainArgs),
    /// Run the full alternating training loop.
    Train(TrainArgs),
    /// Attack a trained encoder with an inference network.
    Attack(AttackArgs),
    /// Estimate I(S;Z) and I(U;Z) of a trained encoder with MINE.
    EstimateMi(EstimateArgs),
    /// Exact discrete information checks.
    #[command(subcommand)]
    Oracle(OracleCommand),
    /// Run a β × d_z × seed grid from a spec file.
    Sweep(SweepArgs),
    /// Turn a records file into plot-ready CSVs.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RolesArg {
    /// Digit is the utility, color the sensitive attribute.
    Digit,
    /// Color is the utility, digit the sensitive attribute.
    Color,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct SourceArgs {
    /// Directory holding the four standard MNIST files.
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
    /// IDX image file; needs `--labels`.
    #[arg(long, requires = "labels")]
    pub images: Option<PathBuf>,
    /// Render this many synthetic digits instead of reading MNIST.
    #[arg(long)]
    pub synthetic: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// IDX label file matching `--images`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Color probabilities `r,g,b`; fractions such as `1/3` are accepted.
    #[arg(long, default_value = "1/3,1/3,1/3")]
    pub colors: String,
    #[arg(long, value_enum, default_value = "digit")]
    pub roles: RolesArg,
    /// Keep only the first N digits.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Shuffle the sensitive labels so they are independent of the images.
    #[arg(long)]
    pub decouple_sensitive: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Dataset container written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    /// mnist-desk, mnist-ref or celeba-ref.
    #[arg(long, default_value = "mnist-desk")]
    pub preset: String,
    #[arg(long, default_value_t = 0.01)]
    pub beta: f64,
    #[arg(long, default_value_t = 8)]
    pub dz: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.7,0.1,0.2")]
    pub split: String,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub warmup_iterations: Option<usize>,
    #[arg(long)]
    pub warmup_batch: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Start from this checkpoint (e.g. from `pretrain`) and skip warm-up.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Also write a checkpoint at every evaluation whose iteration is a multiple of K.
    #[arg(long, value_name = "K")]
    pub checkpoint_every: Option<usize>,
    /// Directory for the checkpoint, metrics CSV and run description.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EncoderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Run description from `train`; defaults to `run.json` beside the checkpoint.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Latent width the evaluation expects; must match the checkpoint.
    #[arg(long)]
    pub dz: Option<usize>,
    /// β reported in the CSV when no run description is available.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Split used when no run description is available.
    #[arg(long, default_value = "0.7,0.1,0.2")]
    pub split: String,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report CSV; rows are appended.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub encoder: EncoderArgs,
    /// Data-ratio grid; one report row per entry.
    #[arg(long, default_value = "0.1,0.5,1.0")]
    pub ratios: String,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub attack_batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    /// Encoded examples handed to MINE.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
}

#[derive(Debug, Subcommand)]
pub enum OracleCommand {
    /// Mutual information of a two-way table given as rows `a,b;c,d`.
    Mi {
        #[arg(long)]
        table: String,
    },
    /// Markov identity and data-processing margin over random instances.
    Markov {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 8)]
        max_alphabet: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// TOML sweep specification.
    pub spec: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}
