//! The four-phase clustered federated pipeline, its baselines and the
//! round primitives they share.

mod config;
mod experiment;
mod rounds;

pub use config::{
    prepare_data, DatasetConfig, DatasetKind, ExperimentConfig, Method, ModelConfig, Phases,
    PreparedData, PruningConfig,
};
pub use experiment::{
    load_checkpoint, run_baseline, run_caafp, run_experiment, save_checkpoint, Checkpoint, Event,
    Experiment, ExperimentResult, ExperimentState, Stage, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use rounds::{
    aggregate, cluster_round, fedavg_round, train_clients, ClusterRoundOutput, ClusterState,
};
