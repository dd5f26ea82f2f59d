use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use concept_coreset::sampler::Mode;
use concept_coreset::scorer::Likelihood;

use crate::stages::Method;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "CONCEPT_CORESET_OUT";

#[derive(Debug, Parser)]
#[command(name = "concept-coreset", version, about = "Concept-based coreset selection")]
pub struct Cli {
    /// TOML config with one section per stage; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    pub out: Option<PathBuf>,

    /// Seed for training shuffles and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select discriminative concepts and assemble their embedding matrix.
    Bottleneck(BottleneckCmd),
    /// Score samples by area under the margin of the bottleneck layer.
    Score(ScoreCmd),
    /// Select a coreset from a score table.
    Select(SelectCmd),
    /// Bottleneck, score and select in one go.
    Pipeline(PipelineCmd),
    /// Synthetic comparison of concept-AUM coresets against random ones.
    Bench(BenchCmd),
    /// Zero-shot labels from class-prompt embeddings.
    PseudoLabel(PseudoLabelCmd),
    /// Write a synthetic dataset in the pipeline's input formats.
    Synth(SynthCmd),
    /// Re-run a stage from its manifest and compare outputs.
    Replay(ReplayCmd),
}

#[derive(Debug, Clone, Default, Args)]
pub struct BottleneckInputs {
    /// Catalog JSON: {"class": ["concept", ...]}.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// JSON array of concept strings, one per embedding row.
    #[arg(long)]
    pub concept_names: Option<PathBuf>,
    /// CBE1 concept embeddings aligned with --concept-names.
    #[arg(long)]
    pub concept_embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct BottleneckOpts {
    /// Concepts per class, class name included.
    #[arg(long)]
    pub k: Option<usize>,
    /// Keep concept embeddings at their stored norm.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ScoreInputArgs {
    /// CBE1 visual embeddings.
    #[arg(long)]
    pub visual: Option<PathBuf>,
    /// CBL1 labels (labeled mode).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// CBE1 class-prompt embeddings (label-free mode).
    #[arg(long)]
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainOpts {
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub likelihood: Option<Likelihood>,
    /// Also write per-epoch margins.
    #[arg(long)]
    pub margins: bool,
    /// Use visual rows as stored instead of scaling them to unit norm.
    #[arg(long)]
    pub no_normalize_visual: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SelectOpts {
    /// Pruning rate: fraction of samples removed.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Cutoff rate: fraction of hardest samples excluded.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Look beta up in the built-in table (cifar10, cifar100, imagenet).
    #[arg(long)]
    pub dataset_tag: Option<String>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Do not top up to the exact budget.
    #[arg(long)]
    pub no_topup: bool,
    #[arg(long)]
    pub method: Option<Method>,
}

#[derive(Debug, Args)]
pub struct BottleneckCmd {
    #[command(flatten)]
    pub inputs: BottleneckInputs,
    #[command(flatten)]
    pub opts: BottleneckOpts,
}

#[derive(Debug, Args)]
pub struct ScoreCmd {
    #[command(flatten)]
    pub inputs: ScoreInputArgs,
    /// CBE1 bottleneck concept matrix.
    #[arg(long)]
    pub bottleneck_embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct SelectCmd {
    /// Score table (JSON lines).
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Visual embeddings to hash into the coreset header.
    #[arg(long)]
    pub visual: Option<PathBuf>,
    /// Mode the scores were computed in (picks the cutoff table).
    #[arg(long)]
    pub mode: Option<Mode>,
    #[command(flatten)]
    pub opts: SelectOpts,
}

#[derive(Debug, Args)]
pub struct PipelineCmd {
    #[command(flatten)]
    pub bottleneck_inputs: BottleneckInputs,
    #[command(flatten)]
    pub bottleneck: BottleneckOpts,
    #[command(flatten)]
    pub score_inputs: ScoreInputArgs,
    #[command(flatten)]
    pub train: TrainOpts,
    #[command(flatten)]
    pub select: SelectOpts,
}

#[derive(Debug, Args)]
pub struct BenchCmd {
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Comma-separated pruning rates.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    /// Comma-separated cutoff rates, one per alpha.
    #[arg(long, value_delimiter = ',')]
    pub beta: Option<Vec<f64>>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub likelihood: Option<Likelihood>,
    #[command(flatten)]
    pub data: SyntheticArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SyntheticArgs {
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub mislabel_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PseudoLabelCmd {
    #[arg(long)]
    pub visual: Option<PathBuf>,
    #[arg(long)]
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    #[command(flatten)]
    pub data: SyntheticArgs,
}

#[derive(Debug, Args)]
pub struct ReplayCmd {
    /// Manifest written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
}
