use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::rounds::{cluster_round, fedavg_round, ClusterState};
use crate::clustering::{
    agglomerative_cluster, compute_delta, cosine_distance_matrix, ClusterAssignment, DistanceMatrix,
};
use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::metrics::{
    comm_cost, Direction, Phase, ResultRow, RoundMetrics, Transmission, FINAL_ROUND,
};
use crate::nn::{
    accumulated_gradient, local_train, ArchitectureSpec, Network, OptimizerState, ParamSet,
    Proximal, TrainConfig,
};
use crate::pruning::{
    importance, magnitude_score, mask_from_scores, regrowth_signal, scheduled_step, ClusterSignals,
    Mask, PruneStepLog,
};
use crate::rng::{derive_seed, rng_for, stream};

pub const CHECKPOINT_FORMAT: &str = "caafp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where an experiment is in its pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    /// Global FedAvg rounds (also the whole training run of oneshot-prune).
    Warmup,
    /// One-off probe epoch and agglomerative clustering.
    Clustering,
    /// Dense cluster rounds.
    Stabilize,
    /// Masked cluster rounds with scheduled mask updates.
    PruneHeal,
    /// Local, communication-free fine-tuning.
    FineTune,
    Done,
}

/// Progress notifications emitted while an experiment runs.
#[derive(Debug, Clone, PartialEq)]
pub enum Event<'a> {
    Round(&'a RoundMetrics),
    Clustered(&'a ClusterAssignment),
    MaskUpdated(&'a PruneStepLog),
    Finished(&'a RoundMetrics),
}

/// Complete resumable state at a round boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentState {
    pub stage: Stage,
    /// Communication rounds completed so far.
    pub round: usize,
    /// Rounds completed within the current stage.
    pub stage_round: usize,
    pub global: ParamSet,
    /// Fixed mask of the oneshot-prune baseline.
    pub global_mask: Option<Mask>,
    pub assignment: Option<ClusterAssignment>,
    pub distances: Option<DistanceMatrix>,
    pub clusters: Vec<ClusterState>,
    /// Adam state per client, reset at every stage boundary.
    pub optimizers: Vec<OptimizerState>,
    /// Parameters each client last returned during pruning rounds.
    pub last_returned: Vec<Option<ParamSet>>,
    /// Final per-client models v_k.
    pub personal: Vec<ParamSet>,
    pub history: Vec<RoundMetrics>,
    pub prune_log: Vec<PruneStepLog>,
    pub transmissions: Vec<Transmission>,
}

/// Serialized experiment: the resolved config plus its state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ExperimentConfig,
    pub arch: ArchitectureSpec,
    pub client_ids: Vec<usize>,
    pub state: ExperimentState,
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer(std::io::BufWriter::new(file), checkpoint)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let cp: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
    if cp.format != CHECKPOINT_FORMAT || cp.version != CHECKPOINT_VERSION {
        return Err(Error::data(format!(
            "unsupported checkpoint {:?} version {}",
            cp.format, cp.version
        )));
    }
    Ok(cp)
}

/// Everything a finished experiment produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub client_ids: Vec<usize>,
    pub assignment: Option<ClusterAssignment>,
    pub distances: Option<DistanceMatrix>,
    /// One entry per communication round, then the final evaluation.
    pub history: Vec<RoundMetrics>,
    pub prune_log: Vec<PruneStepLog>,
    pub transmissions: Vec<Transmission>,
    /// Final per-client models v_k, in client-id order.
    pub personal: Vec<ParamSet>,
    /// Final cluster masks (the global mask for oneshot-prune).
    pub masks: Vec<Mask>,
}

impl ExperimentResult {
    pub fn final_metrics(&self) -> &RoundMetrics {
        self.history
            .last()
            .expect("finished experiments have a final entry")
    }

    pub fn total_mb(&self) -> f64 {
        comm_cost(&self.transmissions)
    }

    /// Per-round rows followed by the `final` summary row.
    pub fn rows(&self, dataset: &str, scenario: &str) -> Vec<ResultRow> {
        let make = |m: &RoundMetrics, round: String| ResultRow {
            method: self.config.method_label(),
            dataset: dataset.to_string(),
            scenario: scenario.to_string(),
            seed: self.config.seed,
            round,
            mu: m.mu,
            sigma: m.sigma,
            sparsity: m.sparsity,
            comm_mb: m.total_mb,
        };
        let (last, rounds) = self.history.split_last().expect("final entry");
        rounds
            .iter()
            .map(|m| make(m, m.round.to_string()))
            .chain(std::iter::once(make(last, FINAL_ROUND.to_string())))
            .collect()
    }
}

/// A resumable run of one configured pipeline over a client population.
pub struct Experiment {
    config: ExperimentConfig,
    net: Network,
    clients: Vec<ClientDataset>,
    state: ExperimentState,
}

impl Experiment {
    /// Sets up the initial state. Clients are ordered by id.
    pub fn new(
        config: ExperimentConfig,
        mut clients: Vec<ClientDataset>,
        arch: &ArchitectureSpec,
    ) -> Result<Self> {
        config.validate()?;
        let net = Network::new(arch)?;
        clients.sort_by_key(|c| c.id);
        Self::check_population(&config, &clients, arch)?;
        let global = net.init_params(derive_seed(config.seed, &[stream::INIT]));
        let n = clients.len();
        let global_mask = match config.method {
            Method::OneshotPrune => Some(mask_from_scores(
                &magnitude_score(&global.prunable_values()),
                config.pruning.target_sparsity,
            )?),
            _ => None,
        };
        let mut state = ExperimentState {
            stage: Stage::Warmup,
            round: 0,
            stage_round: 0,
            global,
            global_mask,
            assignment: None,
            distances: None,
            clusters: Vec::new(),
            optimizers: Vec::new(),
            last_returned: vec![None; n],
            personal: Vec::new(),
            history: Vec::new(),
            prune_log: Vec::new(),
            transmissions: Vec::new(),
        };
        if let Some(mask) = &state.global_mask {
            mask.apply(&mut state.global)?;
        }
        let mut exp = Self {
            config,
            net,
            clients,
            state,
        };
        exp.reset_optimizers();
        exp.state.stage = if exp.warmup_rounds() > 0 {
            Stage::Warmup
        } else {
            exp.after_warmup()
        };
        Ok(exp)
    }

    /// Rebuilds an experiment from a checkpoint and the same population.
    pub fn restore(checkpoint: Checkpoint, mut clients: Vec<ClientDataset>) -> Result<Self> {
        clients.sort_by_key(|c| c.id);
        let ids: Vec<usize> = clients.iter().map(|c| c.id).collect();
        if ids != checkpoint.client_ids {
            return Err(Error::data(
                "checkpoint was written for a different population",
            ));
        }
        let net = Network::new(&checkpoint.arch)?;
        Self::check_population(&checkpoint.config, &clients, &checkpoint.arch)?;
        Ok(Self {
            config: checkpoint.config,
            net,
            clients,
            state: checkpoint.state,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            arch: self.net.spec().clone(),
            client_ids: self.clients.iter().map(|c| c.id).collect(),
            state: self.state.clone(),
        }
    }

    fn check_population(
        config: &ExperimentConfig,
        clients: &[ClientDataset],
        arch: &ArchitectureSpec,
    ) -> Result<()> {
        if clients.is_empty() {
            return Err(Error::data("no clients"));
        }
        if clients.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::data("client ids must be unique"));
        }
        for c in clients {
            c.validate(arch.num_classes)?;
            if c.train.sample_len() != arch.sample_len() || c.test.sample_len() != arch.sample_len()
            {
                return Err(Error::shape(format!(
                    "client {} samples do not match the {}x{} input",
                    c.id, arch.timesteps, arch.channels
                )));
            }
        }
        let samples_clients = config.phases.p1 > 0
            || config.method == Method::OneshotPrune
            || config.sample_cluster_rounds;
        if samples_clients && config.clients_per_round > clients.len() {
            return Err(Error::config(format!(
                "clients_per_round {} exceeds the population of {}",
                config.clients_per_round,
                clients.len()
            )));
        }
        if config.effective_clusters() > clients.len() {
            return Err(Error::config(format!(
                "cannot form {} clusters from {} clients",
                config.effective_clusters(),
                clients.len()
            )));
        }
        Ok(())
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn clients(&self) -> &[ClientDataset] {
        &self.clients
    }

    pub fn state(&self) -> &ExperimentState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.stage == Stage::Done
    }

    fn warmup_rounds(&self) -> usize {
        match self.config.method {
            Method::OneshotPrune => self.config.phases.total_rounds(),
            _ => self.config.phases.p1,
        }
    }

    fn stabilize_rounds(&self) -> usize {
        match self.config.method {
            Method::DenseClustered => self.config.phases.p2 + self.config.phases.p3,
            _ => self.config.phases.p2,
        }
    }

    fn after_warmup(&self) -> Stage {
        match self.config.method {
            Method::OneshotPrune => Stage::FineTune,
            _ => Stage::Clustering,
        }
    }

    fn after_clustering(&self) -> Stage {
        if self.stabilize_rounds() > 0 {
            Stage::Stabilize
        } else {
            self.after_stabilize()
        }
    }

    fn after_stabilize(&self) -> Stage {
        if self.config.method.prunes() && self.config.phases.p3 > 0 {
            Stage::PruneHeal
        } else {
            Stage::FineTune
        }
    }

    fn enter(&mut self, stage: Stage) {
        self.state.stage = stage;
        self.state.stage_round = 0;
        self.reset_optimizers();
    }

    fn reset_optimizers(&mut self) {
        let len = self.net.layout().total();
        self.state.optimizers = (0..self.clients.len())
            .map(|_| OptimizerState::new(len, self.config.learning_rate))
            .collect();
    }

    fn train_config(&self, epochs: usize, dropout: bool) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: self.config.batch_size,
            learning_rate: self.config.learning_rate,
            dropout,
        }
    }

    /// Positions of the clients sampled for `round`, ascending.
    fn sample_clients(&self, round: usize) -> Vec<usize> {
        let n = self.clients.len();
        let k = self.config.clients_per_round.min(n);
        let mut rng = rng_for(self.config.seed, &[stream::SAMPLE_CLIENTS, round as u64]);
        let mut picked = sample(&mut rng, n, k).into_vec();
        picked.sort_unstable();
        picked
    }

    fn round_seed(&self, round: usize) -> u64 {
        derive_seed(self.config.seed, &[stream::LOCAL_TRAIN, round as u64])
    }

    fn should_evaluate(&self, round: usize) -> bool {
        self.config.eval_every > 0 && round.is_multiple_of(self.config.eval_every)
    }

    fn record_exchange(
        &mut self,
        round: usize,
        client: usize,
        down: usize,
        up: usize,
        sparse: bool,
    ) {
        let bitmap = if sparse && self.config.count_mask_bitmap {
            self.net.layout().prunable_len().div_ceil(8)
        } else {
            0
        };
        self.state.transmissions.push(Transmission {
            round,
            client,
            direction: Direction::Down,
            params: down,
            extra_bytes: bitmap,
        });
        self.state.transmissions.push(Transmission {
            round,
            client,
            direction: Direction::Up,
            params: up,
            extra_bytes: 0,
        });
    }

    /// The model each client currently holds and its mask, if any.
    fn held_model(&self, client: usize) -> (&ParamSet, Option<&Mask>) {
        match self.state.stage {
            Stage::Done => {
                let mask = match &self.state.global_mask {
                    Some(m) => Some(m),
                    None => self.cluster_of(client).map(|c| &c.mask),
                };
                (&self.state.personal[client], mask)
            }
            _ => match self.cluster_of(client) {
                Some(c) => (&c.params, Some(&c.mask)),
                None => (&self.state.global, self.state.global_mask.as_ref()),
            },
        }
    }

    fn cluster_of(&self, client: usize) -> Option<&ClusterState> {
        let a = self.state.assignment.as_ref()?;
        self.state.clusters.get(a.cluster_of(client))
    }

    fn metrics(
        &self,
        round: usize,
        phase: Phase,
        round_mb: f64,
        evaluate: bool,
    ) -> Result<RoundMetrics> {
        let n = self.clients.len();
        let sparsity = (0..n)
            .map(|k| self.held_model(k).1.map_or(0.0, Mask::sparsity))
            .sum::<f64>()
            / n as f64;
        let cluster_sparsity = if self.state.clusters.is_empty() {
            vec![self.state.global_mask.as_ref().map_or(0.0, Mask::sparsity)]
        } else {
            self.state
                .clusters
                .iter()
                .map(|c| c.mask.sparsity())
                .collect()
        };
        let mut m = RoundMetrics {
            round,
            phase,
            accuracies: None,
            mu: None,
            sigma: None,
            round_mb,
            total_mb: comm_cost(&self.state.transmissions),
            cluster_sparsity,
            sparsity,
        };
        if evaluate {
            let acc = (0..n)
                .into_par_iter()
                .map(|k| self.net.evaluate(self.held_model(k).0, &self.clients[k]))
                .collect::<Result<Vec<f64>>>()?;
            m.set_accuracies(acc);
        }
        Ok(m)
    }

    /// Advances by one communication round (or one clustering / fine-tuning
    /// stage). Returns false once the experiment is finished.
    pub fn step(&mut self, on_event: &mut dyn FnMut(Event)) -> Result<bool> {
        match self.state.stage {
            Stage::Warmup => self.warmup_round(on_event)?,
            Stage::Clustering => self.cluster_clients(on_event)?,
            Stage::Stabilize => self.cluster_phase_round(false, on_event)?,
            Stage::PruneHeal => self.cluster_phase_round(true, on_event)?,
            Stage::FineTune => self.fine_tune(on_event)?,
            Stage::Done => return Ok(false),
        }
        Ok(!self.is_done())
    }

    /// Runs to completion.
    pub fn run(mut self, on_event: &mut dyn FnMut(Event)) -> Result<ExperimentResult> {
        while self.step(on_event)? {}
        Ok(self.into_result())
    }

    pub fn into_result(self) -> ExperimentResult {
        let masks = match &self.state.global_mask {
            Some(m) => vec![m.clone()],
            None => self.state.clusters.iter().map(|c| c.mask.clone()).collect(),
        };
        ExperimentResult {
            client_ids: self.clients.iter().map(|c| c.id).collect(),
            config: self.config,
            assignment: self.state.assignment,
            distances: self.state.distances,
            history: self.state.history,
            prune_log: self.state.prune_log,
            transmissions: self.state.transmissions,
            personal: self.state.personal,
            masks,
        }
    }

    fn warmup_round(&mut self, on_event: &mut dyn FnMut(Event)) -> Result<()> {
        let round = self.state.round + 1;
        let selected = self.sample_clients(round);
        let cfg = self.train_config(self.config.local_epochs, true);
        let seed = self.round_seed(round);
        let before = comm_cost(&self.state.transmissions);
        {
            let clients: Vec<&ClientDataset> = selected.iter().map(|&k| &self.clients[k]).collect();
            let mut opts = pick_mut(&mut self.state.optimizers, &selected);
            self.state.global = fedavg_round(
                &self.net,
                &self.state.global,
                &clients,
                &mut opts,
                &cfg,
                self.state.global_mask.as_ref(),
                seed,
            )?;
        }
        let (count, sparse) = match &self.state.global_mask {
            Some(m) => (
                m.transmitted_params(self.net.layout()),
                m.pruned_count() > 0,
            ),
            None => (self.net.layout().total(), false),
        };
        for &k in &selected {
            self.record_exchange(round, k, count, count, sparse);
        }
        self.state.round = round;
        self.state.stage_round += 1;
        let mb = comm_cost(&self.state.transmissions) - before;
        let m = self.metrics(round, Phase::Warmup, mb, self.should_evaluate(round))?;
        on_event(Event::Round(&m));
        self.state.history.push(m);
        if self.state.stage_round >= self.warmup_rounds() {
            let next = self.after_warmup();
            self.enter(next);
        }
        Ok(())
    }

    fn cluster_clients(&mut self, on_event: &mut dyn FnMut(Event)) -> Result<()> {
        let reference = &self.state.global;
        let deltas = self
            .clients
            .par_iter()
            .map(|c| {
                compute_delta(
                    &self.net,
                    reference,
                    c,
                    self.config.batch_size,
                    self.config.learning_rate,
                    derive_seed(self.config.seed, &[stream::PROBE, c.id as u64]),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let k = self.config.effective_clusters();
        let (assignment, distances) = if self.clients.len() == 1 {
            (ClusterAssignment::single(1), None)
        } else {
            let dist = cosine_distance_matrix(&deltas)?;
            (agglomerative_cluster(&dist, k)?, Some(dist))
        };
        self.state.clusters = assignment
            .all_members()
            .iter()
            .enumerate()
            .map(|(c, members)| ClusterState::new(c, &self.state.global, members.clone()))
            .collect();
        on_event(Event::Clustered(&assignment));
        self.state.assignment = Some(assignment);
        self.state.distances = distances;
        let next = self.after_clustering();
        self.enter(next);
        Ok(())
    }

    /// Members of cluster `c` taking part in `round`.
    fn participants(&self, c: usize, sampled: Option<&[usize]>) -> Vec<usize> {
        let members = &self.state.clusters[c].members;
        match sampled {
            Some(s) => members.iter().copied().filter(|m| s.contains(m)).collect(),
            None => members.clone(),
        }
    }

    fn cluster_phase_round(
        &mut self,
        pruning: bool,
        on_event: &mut dyn FnMut(Event),
    ) -> Result<()> {
        let round = self.state.round + 1;
        let t = self.state.stage_round + 1;
        let sampled = self
            .config
            .sample_cluster_rounds
            .then(|| self.sample_clients(round));
        let cfg = self.train_config(self.config.local_epochs, true);
        let seed = self.round_seed(round);
        let before = comm_cost(&self.state.transmissions);
        let schedule = self.config.schedule();

        for c in 0..self.state.clusters.len() {
            if pruning && schedule.is_update_round(t) {
                let log = self.update_mask(c, t, round)?;
                on_event(Event::MaskUpdated(&log));
                self.state.prune_log.push(log);
            }
            let part = self.participants(c, sampled.as_deref());
            if part.is_empty() {
                continue;
            }
            let out = {
                let clients: Vec<&ClientDataset> = part.iter().map(|&k| &self.clients[k]).collect();
                let mut opts = pick_mut(&mut self.state.optimizers, &part);
                cluster_round(
                    &self.net,
                    &self.state.clusters[c],
                    &clients,
                    &mut opts,
                    &cfg,
                    self.config.lambda,
                    pruning,
                    seed,
                )?
            };
            let state = &mut self.state.clusters[c];
            state.params = out.params;
            let count = if pruning {
                state.mask.transmitted_params(self.net.layout())
            } else {
                self.net.layout().total()
            };
            let sparse = pruning && state.mask.pruned_count() > 0;
            if pruning {
                for (&k, p) in part.iter().zip(out.returned) {
                    self.state.last_returned[k] = Some(p);
                }
            }
            for &k in &part {
                self.record_exchange(round, k, count, count, sparse);
            }
        }

        self.state.round = round;
        self.state.stage_round = t;
        let phase = if pruning {
            Phase::PruneHeal
        } else {
            Phase::Stabilize
        };
        let mb = comm_cost(&self.state.transmissions) - before;
        let m = self.metrics(round, phase, mb, self.should_evaluate(round))?;
        on_event(Event::Round(&m));
        self.state.history.push(m);
        let limit = if pruning {
            self.config.phases.p3
        } else {
            self.stabilize_rounds()
        };
        if t >= limit {
            let next = if pruning {
                Stage::FineTune
            } else {
                self.after_stabilize()
            };
            self.enter(next);
        }
        Ok(())
    }

    /// Scores cluster `c` and applies one prune-and-heal step at phase round `t`.
    fn update_mask(&mut self, c: usize, t: usize, round: usize) -> Result<PruneStepLog> {
        let schedule = self.config.schedule();
        let cluster = &self.state.clusters[c];
        let proximal = Proximal {
            reference: &cluster.reference,
            lambda: self.config.lambda,
        };
        let grads = cluster
            .members
            .par_iter()
            .map(|&k| {
                accumulated_gradient(
                    &self.net,
                    &cluster.params,
                    &self.clients[k].train,
                    self.config.batch_size,
                    Some(proximal),
                    Some(&cluster.mask),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut returned: Vec<ParamSet> = cluster
            .members
            .iter()
            .filter_map(|&k| self.state.last_returned[k].clone())
            .collect();
        if returned.is_empty() {
            returned.push(cluster.params.clone());
        }
        let signals = ClusterSignals::from_sets(&returned, &grads);
        let scores = importance(
            &cluster.params.prunable_values(),
            &signals,
            &self.config.weights,
        )?;
        let regrowth = regrowth_signal(&signals)?;

        let before = cluster.mask.sparsity();
        let mask = cluster.mask.clone();
        let (next, plan) = scheduled_step(&mask, &scores, &regrowth, &schedule, t)?;

        let layout = self.net.layout().clone();
        let regrown: Vec<usize> = layout
            .prunable_indices()
            .enumerate()
            .filter(|(j, _)| next.is_active(*j) && !mask.is_active(*j))
            .map(|(_, idx)| idx)
            .collect();
        let members = self.state.clusters[c].members.clone();
        for k in members {
            self.state.optimizers[k].reset_positions(regrown.iter().copied());
        }
        let cluster = &mut self.state.clusters[c];
        next.apply(&mut cluster.params)?;
        cluster.mask = next;
        Ok(PruneStepLog {
            round,
            cluster: c,
            sparsity_before: before,
            sparsity_after: cluster.mask.sparsity(),
            n_deficit: plan.n_deficit,
            n_churn: plan.n_churn,
            n_prune: plan.n_prune,
            n_grow: plan.n_grow,
            weights: self.config.weights,
        })
    }

    fn fine_tune(&mut self, on_event: &mut dyn FnMut(Event)) -> Result<()> {
        let epochs = self.config.phases.p4;
        let cfg = self.train_config(epochs, true);
        let lr = self.config.learning_rate;
        let personal = (0..self.clients.len())
            .into_par_iter()
            .map(|k| {
                let (start, mask) = self.held_model(k);
                let mut start = start.clone();
                if let Some(m) = mask {
                    m.apply(&mut start)?;
                }
                if epochs == 0 {
                    return Ok(start);
                }
                let mut opt = OptimizerState::new(start.len(), lr);
                let seed = derive_seed(
                    self.config.seed,
                    &[stream::FINE_TUNE, self.clients[k].id as u64],
                );
                local_train(
                    &self.net,
                    &start,
                    &self.clients[k].train,
                    &cfg,
                    &mut opt,
                    None,
                    mask,
                    seed,
                )
                .map(|o| o.params)
            })
            .collect::<Result<Vec<_>>>()?;
        self.state.personal = personal;
        self.state.stage = Stage::Done;
        self.state.stage_round = 0;
        self.state.optimizers.clear();
        let m = self.metrics(self.state.round, Phase::FineTune, 0.0, true)?;
        on_event(Event::Finished(&m));
        self.state.history.push(m);
        Ok(())
    }
}

/// Mutable references to the optimizers at ascending positions `idx`.
fn pick_mut<'a>(all: &'a mut [OptimizerState], idx: &[usize]) -> Vec<&'a mut OptimizerState> {
    let mut out = Vec::with_capacity(idx.len());
    let mut it = idx.iter().peekable();
    for (k, opt) in all.iter_mut().enumerate() {
        if it.peek() == Some(&&k) {
            out.push(opt);
            it.next();
        }
    }
    debug_assert_eq!(
        out.len(),
        idx.len(),
        "indices must be ascending and in range"
    );
    out
}

fn require_method(config: &ExperimentConfig, allowed: &[Method], what: &str) -> Result<()> {
    if allowed.contains(&config.method) {
        Ok(())
    } else {
        Err(Error::config(format!(
            "{what} does not run method {}",
            config.method
        )))
    }
}

/// The full four-phase pipeline (`caafp`, or `global-ft` with one cluster).
pub fn run_caafp(
    config: &ExperimentConfig,
    clients: Vec<ClientDataset>,
    arch: &ArchitectureSpec,
) -> Result<ExperimentResult> {
    require_method(config, &[Method::Caafp, Method::GlobalFt], "run_caafp")?;
    Experiment::new(config.clone(), clients, arch)?.run(&mut |_| {})
}

/// The comparison pipelines: `dense-clustered`, `oneshot-prune`, `global-ft`.
pub fn run_baseline(
    config: &ExperimentConfig,
    clients: Vec<ClientDataset>,
    arch: &ArchitectureSpec,
) -> Result<ExperimentResult> {
    require_method(
        config,
        &[
            Method::DenseClustered,
            Method::OneshotPrune,
            Method::GlobalFt,
        ],
        "run_baseline",
    )?;
    Experiment::new(config.clone(), clients, arch)?.run(&mut |_| {})
}

/// Runs whichever method the config selects.
pub fn run_experiment(
    config: &ExperimentConfig,
    clients: Vec<ClientDataset>,
    arch: &ArchitectureSpec,
) -> Result<ExperimentResult> {
    Experiment::new(config.clone(), clients, arch)?.run(&mut |_| {})
}
