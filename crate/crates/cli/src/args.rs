use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ensdiv", version, about = "Ensemble diversity, uncertainty and robustness diagnostics")]
pub struct Cli {
    /// Worker threads for parallel kernels (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic prediction store in the manifest format.
    Simulate(SimulateArgs),
    /// Per-point diversity/uncertainty decompositions.
    Decompose(DecomposeArgs),
    /// Conditional diversity curves and the InD/OOD permutation test.
    Conditional(ConditionalArgs),
    /// InD-vs-OOD linear trend fits and effective robustness.
    Trends(TrendsArgs),
    /// Per-point improvement comparison with an MMD two-sample test.
    Improve(ImproveArgs),
    /// Gaussian-process reference experiment.
    GpDemo(GpDemoArgs),
    /// Combine every JSON result under a run directory into one index.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output directory (refused if it exists, unless --force).
    #[arg(long)]
    pub out: PathBuf,
    /// Write into an existing output directory.
    #[arg(long)]
    pub force: bool,
    /// Omit the generation timestamp from SVG files.
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Quadratic,
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    #[value(name = "01")]
    ZeroOne,
    Nll,
    Brier,
    Ece,
    Resce,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, default_value_t = 1000)]
    pub points: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 5)]
    pub models: usize,
    /// Standard deviation of each member's log-temperature.
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    /// Scale of the additive, input-dependent member perturbation.
    #[arg(long, default_value_t = 0.0)]
    pub latent_noise: f64,
    /// OOD input translation in latent standard deviations.
    #[arg(long, default_value_t = 0.0)]
    pub shift: f64,
    #[arg(long, default_value_t = 1)]
    pub groups: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Dataset ids (default: every dataset).
    #[arg(long = "dataset")]
    pub datasets: Vec<String>,
    /// Ensemble ids or `+`-joined member lists (default: manifest ensembles,
    /// else one ensemble per model group).
    #[arg(long = "ensemble")]
    pub ensembles: Vec<String>,
    /// Report entropy-based quantities in bits.
    #[arg(long)]
    pub base_2: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ConditionalArgs {
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long)]
    pub manifest: PathBuf,
    /// `IND:OOD` dataset ids (default: first manifest pair).
    #[arg(long)]
    pub pair: Option<String>,
    #[arg(long)]
    pub ensemble: Option<String>,
    #[arg(long, value_enum, default_value_t = FamilyArg::Quadratic)]
    pub family: FamilyArg,
    #[arg(long, default_value_t = 100)]
    pub surrogates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Points per axis of the KDE grid.
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    /// Cap on scatter points drawn in the SVG.
    #[arg(long, default_value_t = 10_000)]
    pub subsample: usize,
    /// Use the integral form of d instead of the ratio of sums.
    #[arg(long)]
    pub integral_d: bool,
    #[arg(long)]
    pub base_2: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrendsArgs {
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long)]
    pub manifest: PathBuf,
    /// `IND:OOD` pairs (default: every manifest pair).
    #[arg(long = "pair")]
    pub pairs: Vec<String>,
    /// Metrics to fit (default: all).
    #[arg(long = "metric", value_enum)]
    pub metrics: Vec<MetricArg>,
    /// Calibration bins for ECE/rESCE.
    #[arg(long, default_value_t = 15)]
    pub bins: usize,
    /// Enumerate homogeneous ensembles of this size within each group
    /// (0: use manifest ensembles only).
    #[arg(long, default_value_t = 0)]
    pub ensemble_size: usize,
    /// Accuracy bins for heterogeneous ensembles (0: none).
    #[arg(long, default_value_t = 0)]
    pub hetero_bins: usize,
    #[arg(long, default_value_t = 4)]
    pub hetero_members: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fit on logit-transformed axes.
    #[arg(long)]
    pub logit_scale: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreArg {
    #[value(name = "01")]
    ZeroOne,
    Nll,
    Brier,
}

#[derive(Debug, Clone, Args)]
pub struct ImproveArgs {
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Dataset ids (default: every dataset).
    #[arg(long = "dataset")]
    pub datasets: Vec<String>,
    /// Reference model.
    #[arg(long)]
    pub base: String,
    /// First alternative (model, ensemble id or `+`-joined members).
    #[arg(long)]
    pub alt_a: String,
    /// Second alternative.
    #[arg(long)]
    pub alt_b: String,
    /// Control alternative for the MMD test.
    #[arg(long)]
    pub control: Option<String>,
    #[arg(long, value_enum, default_value_t = ScoreArg::Brier)]
    pub metric: ScoreArg,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Cap on points per MMD sample (evenly strided subsample).
    #[arg(long)]
    pub subsample: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct GpDemoArgs {
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Likelihood-variance bins.
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Run directory to index.
    #[arg(long)]
    pub dir: PathBuf,
    /// Replace an existing index.
    #[arg(long)]
    pub force: bool,
}
