use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nutricluster_core::clustering::Preference;
use nutricluster_core::evaluation::{MaeScope, VarianceConvention};
use nutricluster_core::nutrient_data::{parse_nutrient_list, Nutrient};
use nutricluster_core::similarity::OvlAggregation;
use nutricluster_core::synthkit::ConfusionMode;
use serde::Serialize;

fn nutrient_list(s: &str) -> Result<Vec<Nutrient>, String> {
    parse_nutrient_list(s).map_err(|e| e.to_string())
}

fn weight_list(s: &str) -> Result<Vec<f64>, String> {
    s.split([',', '+'])
        .map(|w| w.trim().parse::<f64>().map_err(|_| format!("bad weight `{w}`")))
        .collect()
}

#[derive(Debug, Parser, Serialize)]
#[command(name = "nutricluster", version, about = "Nutrition-aware food category hierarchies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Aggregate a nutrient CSV into a category table with summary stats.
    Ingest(IngestArgs),
    /// Build a nutrient, visual or combined similarity matrix.
    Similarity(SimilarityArgs),
    /// Cluster categories with Affinity Propagation.
    Cluster(ClusterArgs),
    /// Variance and visual-distance metrics of a hierarchy.
    EvalClusters(EvalClustersArgs),
    /// Accuracy and nutrient MAE of a prediction log.
    Mae(MaeArgs),
    /// Train the two-head classifier on a features file.
    TrainToy(TrainToyArgs),
    /// Synthetic data generators.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Compare candidate metric files against a baseline.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Similarity(_) => "similarity",
            Command::Cluster(_) => "cluster",
            Command::EvalClusters(_) => "eval-clusters",
            Command::Mae(_) => "mae",
            Command::TrainToy(_) => "train-toy",
            Command::Synth(SynthCommand::Planted(_)) => "synth planted",
            Command::Synth(SynthCommand::Confusion(_)) => "synth confusion",
            Command::Report(_) => "report",
        }
    }
}

/// Where category nutrient values and image counts come from.
#[derive(Debug, Args, Serialize)]
pub struct TableSource {
    /// Nutrient CSV or table JSON written by `ingest`.
    #[arg(long)]
    pub table: PathBuf,
    /// Image counts CSV; overrides counts derived from features.
    #[arg(long)]
    pub counts: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[command(flatten)]
    pub source: TableSource,
    /// Features CSV used to count images per category when no counts file is given.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SimilarityArgs {
    #[command(flatten)]
    pub source: TableSource,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Nutrient letter codes, e.g. `C,F` or `E`. Omit for a visual-only matrix.
    #[arg(long, value_parser = nutrient_list)]
    pub nutrients: Option<::std::vec::Vec<Nutrient>>,
    /// Per-nutrient weights in the same order as `--nutrients`.
    #[arg(long, value_parser = weight_list)]
    pub weights: Option<::std::vec::Vec<f64>>,
    #[arg(long)]
    pub allow_energy_mix: bool,
    /// Leave the visual domain out (diagnostics only).
    #[arg(long)]
    pub no_visual: bool,
    #[arg(long, default_value = "mean")]
    pub ovl_aggregation: OvlAggregation,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ClusterArgs {
    #[arg(long)]
    pub similarity: PathBuf,
    /// `median` or a number.
    #[arg(long, default_value = "median")]
    pub preference: Preference,
    #[arg(long, default_value_t = 0.5)]
    pub damping: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 50)]
    pub convergence_window: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Disable the seeded tie-breaking noise.
    #[arg(long)]
    pub no_tie_noise: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalClustersArgs {
    #[arg(long)]
    pub hierarchy: PathBuf,
    #[command(flatten)]
    pub source: TableSource,
    /// Features CSV; enables visual distances and supplies image counts.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, value_parser = nutrient_list, default_value = "E,C,F,P")]
    pub nutrients: ::std::vec::Vec<Nutrient>,
    #[arg(long, default_value = "weighted")]
    pub variance_convention: VarianceConvention,
    #[arg(long, default_value = "mean")]
    pub ovl_aggregation: OvlAggregation,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MaeArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[command(flatten)]
    pub source: TableSource,
    #[arg(long, value_parser = nutrient_list, default_value = "E,C,F,P")]
    pub nutrients: ::std::vec::Vec<Nutrient>,
    #[arg(long, default_value = "all")]
    pub scope: MaeScope,
    /// Hierarchy whose variances (and, with `--features`, distances) join the report.
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    #[arg(long, requires = "hierarchy")]
    pub features: Option<PathBuf>,
    #[arg(long, default_value = "weighted")]
    pub variance_convention: VarianceConvention,
    #[arg(long, default_value = "mean")]
    pub ovl_aggregation: OvlAggregation,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainToyArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub hierarchy: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// Fix the shared layer to the identity map with no rectifier.
    #[arg(long)]
    pub identity_shared: bool,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.5)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.5)]
    pub decay_factor: f64,
    #[arg(long, default_value_t = 10)]
    pub decay_interval: usize,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Held-out predictions CSV; defaults to `<out>.predictions.csv`.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthCommand {
    /// Planted-group nutrient, counts, features and ground-truth files.
    Planted(PlantedArgs),
    /// Prediction log from a confusion model over a hierarchy.
    Confusion(ConfusionArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PlantedArgs {
    #[arg(long, default_value_t = 4)]
    pub groups: usize,
    #[arg(long, default_value_t = 5)]
    pub per_group: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    #[arg(long, default_value_t = 10.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Distinct visual centers; nutrient group g looks like visual group g mod this.
    #[arg(long)]
    pub visual_groups: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub images_per_category: usize,
    #[arg(long, default_value_t = 4)]
    pub items_per_category: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ConfusionArgs {
    #[command(flatten)]
    pub source: TableSource,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub hierarchy: PathBuf,
    #[arg(long)]
    pub error_rate: f64,
    #[arg(long, default_value = "within_cluster")]
    pub mode: ConfusionMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Metrics JSON of the flat baseline run.
    #[arg(long)]
    pub baseline: PathBuf,
    /// Candidate metrics JSON; repeat for several runs.
    #[arg(long = "candidate", required = true)]
    pub candidates: Vec<PathBuf>,
    #[arg(long, default_value = "all")]
    pub scope: MaeScope,
    #[arg(long)]
    pub out: PathBuf,
}
