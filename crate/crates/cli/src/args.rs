use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "caafp",
    version,
    about = "Cluster-aware adaptive federated pruning simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a single experiment and write its CSV rows and manifest.
    Run(RunArgs),
    /// Run a grid of experiments over seeds, methods, weights and scenarios.
    Sweep(SweepArgs),
    /// Aggregate final rows of result CSVs into mean and std per setting.
    Report(ReportArgs),
    /// Load a dataset and print ingestion and heterogeneity statistics.
    ValidateData(ValidateArgs),
    /// Run the built-in reference-implementation checks.
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// CA-AFP(0,0,50) on UCI-HAR: S=0.7, P4=3, weights (0.5, 0.25, 0.25).
    UciharReference,
    /// CA-AFP(0,0,50) on WISDM: S=0.7, P4=25, weights (0.25, 0.25, 0.5).
    WisdmReference,
    /// Importance-score ablation: S 0.3 to 0.7 over 15 rounds, E=1, no fine-tuning.
    ScoreAblation,
    /// Small synthetic population that runs in seconds.
    Desk,
}

/// Settings shared by `run` and `sweep`. Every flag mirrors a config key and
/// overrides the config file; `--set` overrides everything.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Start from a built-in configuration.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// TOML config file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// caafp, dense-clustered, oneshot-prune or global-ft.
    #[arg(long)]
    pub method: Option<String>,
    /// Value for the method column of result rows.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// synth, wisdm, ucihar or population.
    #[arg(long)]
    pub dataset: Option<String>,
    /// WISDM raw file, UCI-HAR root directory or population file.
    #[arg(long)]
    pub data_path: Option<PathBuf>,
    /// standard, noisy-clients, drift or non-iid-<k>.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub p1: Option<usize>,
    #[arg(long)]
    pub p2: Option<usize>,
    #[arg(long)]
    pub p3: Option<usize>,
    /// Fine-tuning epochs.
    #[arg(long)]
    pub p4: Option<usize>,
    /// Local epochs per round.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub clients_per_round: Option<usize>,
    /// Importance weights as alpha,beta,gamma.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub weights: Option<Vec<f64>>,
    #[arg(long)]
    pub start_sparsity: Option<f64>,
    #[arg(long)]
    pub target_sparsity: Option<f64>,
    /// Rounds between mask updates.
    #[arg(long)]
    pub frequency: Option<usize>,
    #[arg(long)]
    pub churn: Option<f64>,
    /// Evaluate every n-th round (0: final models only).
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Charge a mask bitmap to every sparse broadcast.
    #[arg(long)]
    pub count_mask_bitmap: bool,
    /// Override any config key, e.g. `--set dataset.synth.noise=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory for results.csv and manifest.json.
    #[arg(long, short, default_value = "results")]
    pub out: PathBuf,
    /// Save a checkpoint here after every round.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint instead of starting fresh.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many rounds, leaving the checkpoint to resume from.
    #[arg(long, requires = "checkpoint")]
    pub stop_after: Option<usize>,
    /// Print the resolved config and exit.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightsGrid {
    /// The seven (alpha, beta, gamma) combinations of the score ablation.
    Ablation,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    /// Scenarios to cover; `ablation` defaults to standard, noisy-clients, drift.
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Vec<String>,
    #[arg(long, value_enum)]
    pub weights_grid: Option<WeightsGrid>,
    /// Phase splits as P1:P2:P3, e.g. `0:0:50,10:10:30`.
    #[arg(long, value_delimiter = ',')]
    pub phases: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Vec<f64>,
    /// Output directory for results.csv, final.csv and manifest.json.
    #[arg(long, short, default_value = "sweep")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Result CSV files to merge.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// wisdm, ucihar, population or synth.
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
