use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{
    apply_scenario, load_population, load_ucihar, load_wisdm, split_client, standardize_per_client,
    synth_population, ClientDataset, ScenarioSpec, SynthConfig, UCIHAR_CHANNELS, UCIHAR_WINDOW,
    WISDM_ACTIVITIES, WISDM_WINDOW,
};
use crate::error::{Error, Result};
use crate::nn::ArchitectureSpec;
use crate::pruning::{PruneSchedule, ScoreWeights};
use crate::rng::{derive_seed, stream};

/// Training pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Clustering, dense stabilization, prune-and-heal, masked fine-tuning.
    Caafp,
    /// Clustering and dense cluster rounds only; no mask.
    DenseClustered,
    /// One global model pruned once by magnitude, then masked FedAvg.
    OneshotPrune,
    /// The full pipeline with a single cluster.
    GlobalFt,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Caafp,
        Method::DenseClustered,
        Method::OneshotPrune,
        Method::GlobalFt,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Caafp => "caafp",
            Method::DenseClustered => "dense-clustered",
            Method::OneshotPrune => "oneshot-prune",
            Method::GlobalFt => "global-ft",
        }
    }

    pub fn prunes(&self) -> bool {
        !matches!(self, Method::DenseClustered)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Synth,
    Wisdm,
    Ucihar,
    /// A saved population file.
    Population,
}

impl DatasetKind {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::Synth => "synth",
            DatasetKind::Wisdm => "wisdm",
            DatasetKind::Ucihar => "ucihar",
            DatasetKind::Population => "population",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// WISDM raw file, UCI-HAR root directory, or population file.
    pub path: Option<PathBuf>,
    pub test_fraction: f64,
    pub synth: SynthConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Synth,
            path: None,
            test_fraction: 0.2,
            synth: SynthConfig::default(),
        }
    }
}

/// Hidden widths of the CNN. Real datasets use 64 filters and 32 units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub filters: usize,
    pub dense_units: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            filters: 64,
            dense_units: 32,
        }
    }
}

/// Rounds per phase; `p4` counts local fine-tuning epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Phases {
    pub p1: usize,
    pub p2: usize,
    pub p3: usize,
    pub p4: usize,
}

impl Default for Phases {
    fn default() -> Self {
        Self {
            p1: 0,
            p2: 0,
            p3: 50,
            p4: 3,
        }
    }
}

impl Phases {
    /// Communication rounds across phases 1 to 3.
    pub fn total_rounds(&self) -> usize {
        self.p1 + self.p2 + self.p3
    }
}

/// Prune-and-heal settings; the schedule length is the phase-3 round count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruningConfig {
    pub start_sparsity: f64,
    pub target_sparsity: f64,
    pub frequency: usize,
    pub churn: f64,
}

impl Default for PruningConfig {
    fn default() -> Self {
        let s = PruneSchedule::default();
        Self {
            start_sparsity: s.start_sparsity,
            target_sparsity: s.target_sparsity,
            frequency: s.frequency,
            churn: s.churn,
        }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Name written to the `method` column instead of the method name.
    pub label: Option<String>,
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub scenario: ScenarioSpec,
    pub model: ModelConfig,
    pub phases: Phases,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Proximal coefficient of the cluster objective.
    pub lambda: f64,
    pub clusters: usize,
    /// Clients sampled per global (FedAvg) round.
    pub clients_per_round: usize,
    /// Also sample `clients_per_round` clients in cluster rounds instead of
    /// training every member.
    pub sample_cluster_rounds: bool,
    pub weights: ScoreWeights,
    pub pruning: PruningConfig,
    /// Evaluate every n-th round (0: only the final models).
    pub eval_every: usize,
    /// Charge a one-bit-per-position mask bitmap to every sparse broadcast.
    pub count_mask_bitmap: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Caafp,
            label: None,
            seed: 0,
            dataset: DatasetConfig::default(),
            scenario: ScenarioSpec::default(),
            model: ModelConfig::default(),
            phases: Phases::default(),
            local_epochs: 3,
            batch_size: 32,
            learning_rate: 1e-3,
            lambda: 0.1,
            clusters: 3,
            clients_per_round: 10,
            sample_cluster_rounds: false,
            weights: ScoreWeights::default(),
            pruning: PruningConfig::default(),
            eval_every: 1,
            count_mask_bitmap: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Value for the `method` column of result rows.
    pub fn method_label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.method.name().to_string())
    }

    pub fn schedule(&self) -> PruneSchedule {
        PruneSchedule {
            start_sparsity: self.pruning.start_sparsity,
            target_sparsity: self.pruning.target_sparsity,
            frequency: self.pruning.frequency,
            churn: self.pruning.churn,
            rounds: self.phases.p3,
        }
    }

    /// Number of clusters actually formed for this method.
    pub fn effective_clusters(&self) -> usize {
        match self.method {
            Method::GlobalFt | Method::OneshotPrune => 1,
            _ => self.clusters,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.learning_rate.is_nan() || self.learning_rate < 0.0 {
            return Err(Error::config("learning_rate must be non-negative"));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::config(format!("negative lambda {}", self.lambda)));
        }
        if self.clients_per_round == 0 {
            return Err(Error::config("clients_per_round must be positive"));
        }
        if self.clusters == 0 {
            return Err(Error::config("clusters must be at least 1"));
        }
        if !(self.dataset.test_fraction > 0.0 && self.dataset.test_fraction < 1.0) {
            return Err(Error::config("test_fraction must lie in (0, 1)"));
        }
        if self.model.filters == 0 || self.model.dense_units == 0 {
            return Err(Error::config("model widths must be positive"));
        }
        self.weights.validate()?;
        self.scenario.validate()?;
        match self.method {
            Method::Caafp | Method::GlobalFt => {
                if self.phases.p3 == 0 {
                    return Err(Error::config("pruning methods need p3 >= 1"));
                }
                let schedule = self.schedule();
                schedule.validate()?;
                if schedule.first_update_round().is_none() {
                    return Err(Error::config(format!(
                        "pruning frequency {} exceeds p3 = {}",
                        schedule.frequency, schedule.rounds
                    )));
                }
            }
            Method::OneshotPrune => {
                if self.phases.total_rounds() == 0 {
                    return Err(Error::config("oneshot-prune needs at least one round"));
                }
                if !(0.0..1.0).contains(&self.pruning.target_sparsity) {
                    return Err(Error::config("target_sparsity must lie in [0, 1)"));
                }
            }
            Method::DenseClustered => {}
        }
        if self.dataset.kind == DatasetKind::Synth {
            self.dataset.synth.validate()?;
        } else if self.dataset.path.is_none() {
            return Err(Error::data(format!(
                "dataset {} needs a path",
                self.dataset.kind.name()
            )));
        }
        Ok(())
    }
}

/// A prepared client population and its network shape.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub clients: Vec<ClientDataset>,
    pub num_classes: usize,
    pub arch: ArchitectureSpec,
    /// Indices of clients whose labels the scenario corrupted.
    pub affected: Vec<usize>,
}

/// Loads the configured dataset, splits each client into train/test,
/// standardizes WISDM channels, and applies the scenario.
pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    config.validate()?;
    let ds = &config.dataset;
    let (raw, num_classes, standardize) = match ds.kind {
        DatasetKind::Synth => (synth_population(&ds.synth)?, ds.synth.classes, false),
        DatasetKind::Wisdm => {
            let data = load_wisdm(ds.path.as_ref().expect("validated"))?;
            (data.clients, WISDM_ACTIVITIES.len(), true)
        }
        DatasetKind::Ucihar => (load_ucihar(ds.path.as_ref().expect("validated"))?, 6, false),
        DatasetKind::Population => {
            let pop = load_population(ds.path.as_ref().expect("validated"))?;
            (pop.clients, pop.num_classes, false)
        }
    };
    if raw.is_empty() {
        return Err(Error::data("dataset produced no clients"));
    }
    let split_seed = derive_seed(config.seed, &[stream::SPLIT]);
    let mut clients = raw
        .iter()
        .map(|c| {
            if c.test.is_empty() {
                split_client(c, ds.test_fraction, split_seed)
            } else {
                Ok(c.clone())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if standardize {
        clients.iter_mut().for_each(standardize_per_client);
    }
    let mut scenario = config.scenario;
    scenario.seed = derive_seed(config.seed, &[stream::SCENARIO, scenario.seed]);
    let (clients, affected) = apply_scenario(&clients, &scenario, num_classes)?;
    let first = &clients[0].train;
    let arch = match ds.kind {
        DatasetKind::Wisdm => ArchitectureSpec::wisdm(),
        DatasetKind::Ucihar => ArchitectureSpec::ucihar(),
        _ => ArchitectureSpec::scaled_har(
            first.window(),
            first.channels(),
            num_classes,
            config.model.filters,
            config.model.dense_units,
        ),
    };
    debug_assert!(ds.kind != DatasetKind::Wisdm || first.window() == WISDM_WINDOW);
    debug_assert!(
        ds.kind != DatasetKind::Ucihar
            || (first.window() == UCIHAR_WINDOW && first.channels() == UCIHAR_CHANNELS)
    );
    Ok(PreparedData {
        clients,
        num_classes,
        arch,
        affected,
    })
}
