//! Shared fixtures for the benchmarks.

use caafp_core::clustering::{DistanceMatrix, UpdateDelta};
use caafp_core::data::{synth_population, Samples, SynthConfig};
use caafp_core::nn::{ArchitectureSpec, Network, ParamSet};
use caafp_core::pruning::{ClusterSignals, Mask, PruneSchedule};
use caafp_core::rng::rng_for;
use rand::Rng;

/// A network with its He-initialised parameters and a batch of inputs that
/// matches its sample shape.
pub struct ModelFixture {
    pub name: &'static str,
    pub net: Network,
    pub params: ParamSet,
    pub samples: Samples,
}

impl ModelFixture {
    pub fn new(name: &'static str, spec: ArchitectureSpec, samples: usize) -> Self {
        let net = Network::new(&spec).expect("valid architecture");
        let params = net.init_params(7);
        let population = synth_population(&SynthConfig {
            num_clusters: 1,
            clients_per_cluster: 1,
            samples_per_client: samples,
            window: spec.timesteps,
            channels: spec.channels,
            classes: spec.num_classes,
            ..SynthConfig::default()
        })
        .expect("valid synthetic config");
        let samples = population.into_iter().next().expect("one client").train;
        Self {
            name,
            net,
            params,
            samples,
        }
    }

    pub fn prunable_len(&self) -> usize {
        self.net.layout().prunable_len()
    }
}

/// The reduced-width desk model and the full WISDM-shaped model.
pub fn model_fixtures(samples: usize) -> Vec<ModelFixture> {
    vec![
        ModelFixture::new(
            "desk",
            ArchitectureSpec::scaled_har(24, 3, 6, 8, 16),
            samples,
        ),
        ModelFixture::new("wisdm", ArchitectureSpec::wisdm(), samples),
    ]
}

fn pseudo_random(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, &[]);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Per-member parameter and gradient vectors of one cluster.
pub fn cluster_signals(members: usize, len: usize) -> ClusterSignals {
    let params = (0..members)
        .map(|m| pseudo_random(len, 100 + m as u64))
        .collect();
    let grads = (0..members)
        .map(|m| pseudo_random(len, 200 + m as u64))
        .collect();
    ClusterSignals::new(params, grads)
}

/// A mask at `sparsity` plus score and regrowth vectors of the same length.
pub fn mask_fixture(len: usize, sparsity: f64) -> (Mask, Vec<f64>, Vec<f64>) {
    let scores: Vec<f64> = pseudo_random(len, 1).iter().map(|v| v.abs()).collect();
    let regrowth: Vec<f64> = pseudo_random(len, 2).iter().map(|v| v.abs()).collect();
    let cutoff = (sparsity * len as f64).round() as usize;
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut bits = vec![true; len];
    for &i in &order[..cutoff] {
        bits[i] = false;
    }
    (Mask::from_bits(bits), scores, regrowth)
}

/// Constant-sparsity schedule with the default churn.
pub fn schedule(sparsity: f64) -> PruneSchedule {
    PruneSchedule {
        start_sparsity: sparsity,
        target_sparsity: sparsity,
        ..PruneSchedule::default()
    }
}

/// Update deltas for `groups` well-separated groups of `per_group` clients.
pub fn grouped_deltas(groups: usize, per_group: usize, len: usize) -> Vec<UpdateDelta> {
    let centres: Vec<Vec<f64>> = (0..groups)
        .map(|g| pseudo_random(len, 300 + g as u64))
        .collect();
    (0..groups * per_group)
        .map(|client| {
            let noise = pseudo_random(len, 400 + client as u64);
            let centre = &centres[client / per_group];
            UpdateDelta {
                client,
                values: centre
                    .iter()
                    .zip(&noise)
                    .map(|(c, n)| c + 0.1 * n)
                    .collect(),
            }
        })
        .collect()
}

/// Random symmetric distance matrix with a zero diagonal.
pub fn random_distances(n: usize) -> DistanceMatrix {
    let values = pseudo_random(n * n, 9);
    DistanceMatrix::from_fn(n, |i, j| {
        let (a, b) = (i.min(j), i.max(j));
        values[a * n + b].abs()
    })
}
