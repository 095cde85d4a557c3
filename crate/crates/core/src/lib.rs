//! Deterministic simulator for cluster-aware adaptive federated pruning.
//!
//! The crate bundles a small 1D-CNN engine ([`nn`]), HAR data ingestion and
//! synthetic populations ([`data`]), update-direction client clustering
//! ([`clustering`]), importance-scored prune-and-heal masks ([`pruning`]),
//! the four-phase federated pipeline and its baselines ([`federation`]), and
//! accuracy/fairness/communication accounting ([`metrics`]).

pub mod clustering;
pub mod data;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod pruning;
pub mod rng;

pub use clustering::{
    agglomerative_cluster, compute_delta, cosine_distance_matrix, rand_index, ClusterAssignment,
    DistanceMatrix, UpdateDelta,
};
pub use data::{ClientDataset, Samples, ScenarioKind, ScenarioSpec, SynthConfig};
pub use error::{Error, Result};
pub use federation::{
    prepare_data, run_baseline, run_caafp, run_experiment, Experiment, ExperimentConfig,
    ExperimentResult, Method,
};
pub use metrics::{comm_cost, fairness, score_ratio, ResultRow, RoundMetrics};
pub use nn::{ArchitectureSpec, GradientSet, Network, OptimizerState, ParamSet};
pub use pruning::{Mask, PruneSchedule, ScoreWeights};
