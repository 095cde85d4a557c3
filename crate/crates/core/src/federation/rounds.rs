use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::nn::{local_train, Network, OptimizerState, ParamSet, Proximal, TrainConfig};
use crate::pruning::Mask;
use crate::rng::derive_seed;

/// Server-side state of one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub id: usize,
    /// Cluster model w_c.
    pub params: ParamSet,
    /// Mask M_c (all ones until pruning starts).
    pub mask: Mask,
    /// Frozen personal reference w_p shared by every member.
    pub reference: ParamSet,
    /// Member positions in the (id-sorted) client list.
    pub members: Vec<usize>,
}

impl ClusterState {
    pub fn new(id: usize, start: &ParamSet, members: Vec<usize>) -> Self {
        Self {
            id,
            params: start.clone(),
            mask: Mask::for_layout(start.layout()),
            reference: start.clone(),
            members,
        }
    }

    /// Personal reference of a member (identical for all members).
    pub fn personal_reference(&self, _member: usize) -> &ParamSet {
        &self.reference
    }

    /// True when every pruned position of w_c is zero.
    pub fn is_consistent(&self) -> bool {
        self.mask.is_respected_by(&self.params)
    }
}

/// Data-size weighted average `Σ_k (|D_k|/|D|)·w_k`, optionally masked.
///
/// Positions where every update carries the same value take that value
/// exactly, so unchanged models and single-client rounds are reproduced
/// bit for bit. Updates are summed in the order given.
pub fn aggregate(
    base: &ParamSet,
    updates: &[(usize, &ParamSet)],
    mask: Option<&Mask>,
) -> Result<ParamSet> {
    if updates.is_empty() {
        return Err(Error::config("aggregation needs at least one update"));
    }
    let total: usize = updates.iter().map(|(n, _)| n).sum();
    if total == 0 {
        return Err(Error::data("aggregation weights sum to zero"));
    }
    for (_, params) in updates {
        base.ensure_same_layout(params)?;
    }
    let shares: Vec<f64> = updates
        .iter()
        .map(|(n, _)| *n as f64 / total as f64)
        .collect();
    let first = updates[0].1.values();
    let mut out = base.clone();
    for (i, o) in out.values_mut().iter_mut().enumerate() {
        *o = if updates.iter().all(|(_, p)| p.values()[i] == first[i]) {
            first[i]
        } else {
            updates
                .iter()
                .zip(&shares)
                .map(|((_, p), s)| s * p.values()[i])
                .sum()
        };
    }
    if let Some(m) = mask {
        m.apply(&mut out)?;
    }
    Ok(out)
}

/// (|D_k|, w_k) pairs in ascending client-id order, so the aggregate does
/// not depend on the order clients were listed in.
fn by_client_id<'a>(
    clients: &[&ClientDataset],
    returned: &'a [ParamSet],
) -> Vec<(usize, &'a ParamSet)> {
    let mut order: Vec<usize> = (0..clients.len()).collect();
    order.sort_by_key(|&i| clients[i].id);
    order
        .into_iter()
        .map(|i| (clients[i].train_size(), &returned[i]))
        .collect()
}

/// Local training of several clients from the same start point, in
/// parallel, returning their parameters in input order.
#[allow(clippy::too_many_arguments)]
pub fn train_clients(
    net: &Network,
    start: &ParamSet,
    clients: &[&ClientDataset],
    optimizers: &mut [&mut OptimizerState],
    cfg: &TrainConfig,
    proximal: Option<Proximal>,
    mask: Option<&Mask>,
    round_seed: u64,
) -> Result<Vec<ParamSet>> {
    if clients.len() != optimizers.len() {
        return Err(Error::shape("one optimizer per client required"));
    }
    clients
        .par_iter()
        .zip(optimizers.par_iter_mut())
        .map(|(client, opt)| {
            let seed = derive_seed(round_seed, &[client.id as u64]);
            local_train(net, start, &client.train, cfg, opt, proximal, mask, seed)
                .map(|out| out.params)
        })
        .collect()
}

/// One FedAvg round: every selected client trains from `global` and the
/// server returns their data-size weighted average (masked if a mask is
/// given).
#[allow(clippy::too_many_arguments)]
pub fn fedavg_round(
    net: &Network,
    global: &ParamSet,
    clients: &[&ClientDataset],
    optimizers: &mut [&mut OptimizerState],
    cfg: &TrainConfig,
    mask: Option<&Mask>,
    round_seed: u64,
) -> Result<ParamSet> {
    let returned = train_clients(
        net, global, clients, optimizers, cfg, None, mask, round_seed,
    )?;
    aggregate(global, &by_client_id(clients, &returned), mask)
}

/// Result of one cluster round.
#[derive(Debug, Clone)]
pub struct ClusterRoundOutput {
    /// Aggregated cluster model (masked when the mask is active).
    pub params: ParamSet,
    /// Each participant's returned parameters, in input order.
    pub returned: Vec<ParamSet>,
}

/// One cluster round: participants minimize the proximal objective against
/// the cluster's personal reference and the server aggregates with weights
/// |D_k|/|D_c|. With `mask_active` training keeps pruned positions at zero
/// and the aggregate is multiplied by the mask.
#[allow(clippy::too_many_arguments)]
pub fn cluster_round(
    net: &Network,
    state: &ClusterState,
    participants: &[&ClientDataset],
    optimizers: &mut [&mut OptimizerState],
    cfg: &TrainConfig,
    lambda: f64,
    mask_active: bool,
    round_seed: u64,
) -> Result<ClusterRoundOutput> {
    if participants.is_empty() {
        return Err(Error::config(format!(
            "cluster {} has no participants",
            state.id
        )));
    }
    let proximal = Proximal {
        reference: &state.reference,
        lambda,
    };
    let mask = mask_active.then_some(&state.mask);
    let returned = train_clients(
        net,
        &state.params,
        participants,
        optimizers,
        cfg,
        Some(proximal),
        mask,
        round_seed,
    )?;
    let params = aggregate(&state.params, &by_client_id(participants, &returned), mask)?;
    Ok(ClusterRoundOutput { params, returned })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::data::{synth_population, SynthConfig};
    use crate::nn::{ArchitectureSpec, Layout};

    fn scalar_layout() -> Arc<Layout> {
        Arc::new(Layout::from_slots(vec![("w".into(), vec![2], true)]))
    }

    fn vector(layout: &Arc<Layout>, v: [f64; 2]) -> ParamSet {
        ParamSet::from_values(layout.clone(), v.to_vec()).unwrap()
    }

    #[test]
    fn aggregation_examples() {
        let l = scalar_layout();
        let zero = vector(&l, [0.0, 0.0]);
        let two = vector(&l, [2.0, 2.0]);
        let mean = aggregate(&zero, &[(5, &zero), (5, &two)], None).unwrap();
        assert_eq!(mean.values(), &[1.0, 1.0]);

        let four = vector(&l, [4.0, 4.0]);
        let weighted = aggregate(&zero, &[(1, &zero), (3, &four)], None).unwrap();
        assert_eq!(weighted.values(), &[3.0, 3.0]);

        let mask = Mask::from_bits(vec![true, false]);
        let masked = aggregate(&zero, &[(2, &zero), (2, &two)], Some(&mask)).unwrap();
        assert_eq!(masked.values(), &[1.0, 0.0]);
        let ones = Mask::from_bits(vec![true, true]);
        assert_eq!(
            aggregate(&zero, &[(2, &zero), (2, &two)], Some(&ones)).unwrap(),
            mean
        );
    }

    #[test]
    fn identical_updates_reproduce_base_exactly() {
        let l = scalar_layout();
        let base = vector(&l, [0.1, -0.7]);
        let out = aggregate(&base, &[(1, &base), (2, &base), (7, &base)], None).unwrap();
        assert_eq!(out, base);
    }

    fn small_setup() -> (Network, Vec<ClientDataset>) {
        let cfg = SynthConfig {
            samples_per_client: 12,
            window: 16,
            channels: 2,
            ..SynthConfig::default()
        };
        let clients = synth_population(&cfg).unwrap();
        let net = Network::new(&ArchitectureSpec::scaled_har(16, 2, 3, 4, 5)).unwrap();
        (net, clients)
    }

    fn train_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            learning_rate: 1e-2,
            dropout: true,
        }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (net, clients) = small_setup();
        let global = net.init_params(1);
        let selected: Vec<&ClientDataset> = clients.iter().take(3).collect();
        let mut opts: Vec<OptimizerState> = (0..3)
            .map(|_| OptimizerState::new(global.len(), 1e-2))
            .collect();
        let mut refs: Vec<&mut OptimizerState> = opts.iter_mut().collect();
        let out =
            fedavg_round(&net, &global, &selected, &mut refs, &train_cfg(0), None, 5).unwrap();
        assert_eq!(out, global);
    }

    #[test]
    fn single_client_round_returns_its_model() {
        let (net, clients) = small_setup();
        let global = net.init_params(2);
        let selected = [&clients[0]];
        let mut a = OptimizerState::new(global.len(), 1e-2);
        let mut b = OptimizerState::new(global.len(), 1e-2);
        let out = fedavg_round(
            &net,
            &global,
            &selected,
            &mut [&mut a],
            &train_cfg(1),
            None,
            9,
        )
        .unwrap();
        let direct = train_clients(
            &net,
            &global,
            &selected,
            &mut [&mut b],
            &train_cfg(1),
            None,
            None,
            9,
        )
        .unwrap();
        assert_eq!(out, direct[0]);
    }

    #[test]
    fn client_order_does_not_matter() {
        let (net, clients) = small_setup();
        let global = net.init_params(7);
        let fwd: Vec<&ClientDataset> = clients.iter().take(4).collect();
        let rev: Vec<&ClientDataset> = fwd.iter().rev().copied().collect();
        let run = |selected: &[&ClientDataset]| {
            let mut opts: Vec<OptimizerState> = (0..4)
                .map(|_| OptimizerState::new(global.len(), 1e-2))
                .collect();
            let mut refs: Vec<&mut OptimizerState> = opts.iter_mut().collect();
            fedavg_round(&net, &global, selected, &mut refs, &train_cfg(1), None, 3).unwrap()
        };
        assert_eq!(run(&fwd), run(&rev));
    }

    #[test]
    fn larger_lambda_stays_closer_to_reference() {
        let (net, clients) = small_setup();
        let reference = net.init_params(3);
        let mut state = ClusterState::new(0, &reference, vec![0]);
        state.params = net.init_params(4);
        let mut last = f64::INFINITY;
        for lambda in [0.01, 1.0, 100.0] {
            let mut opt = OptimizerState::new(reference.len(), 1e-2);
            let out = cluster_round(
                &net,
                &state,
                &[&clients[0]],
                &mut [&mut opt],
                &train_cfg(3),
                lambda,
                false,
                11,
            )
            .unwrap();
            let d = out.returned[0].squared_distance(&reference).unwrap();
            assert!(d < last, "lambda {lambda}: {d} !< {last}");
            last = d;
        }
    }

    #[test]
    fn masked_cluster_round_keeps_closure() {
        let (net, clients) = small_setup();
        let start = net.init_params(6);
        let mut state = ClusterState::new(0, &start, vec![0, 1]);
        let n = start.layout().prunable_len();
        state.mask = Mask::from_bits((0..n).map(|i| i % 3 != 0).collect());
        state.mask.apply(&mut state.params).unwrap();
        let mut o1 = OptimizerState::new(start.len(), 1e-2);
        let mut o2 = OptimizerState::new(start.len(), 1e-2);
        let out = cluster_round(
            &net,
            &state,
            &[&clients[0], &clients[1]],
            &mut [&mut o1, &mut o2],
            &train_cfg(1),
            0.1,
            true,
            3,
        )
        .unwrap();
        assert!(state.mask.is_respected_by(&out.params));
        assert!(out.returned.iter().all(|p| state.mask.is_respected_by(p)));
    }

    #[test]
    fn zero_lambda_cluster_round_equals_fedavg() {
        let (net, clients) = small_setup();
        let start = net.init_params(8);
        let mut state = ClusterState::new(0, &net.init_params(9), vec![0, 1, 2]);
        state.params = start.clone();
        let members: Vec<&ClientDataset> = clients.iter().take(3).collect();
        let fresh = || -> Vec<OptimizerState> {
            (0..3)
                .map(|_| OptimizerState::new(start.len(), 1e-2))
                .collect()
        };
        let mut a = fresh();
        let mut refs: Vec<&mut OptimizerState> = a.iter_mut().collect();
        let clustered = cluster_round(
            &net,
            &state,
            &members,
            &mut refs,
            &train_cfg(2),
            0.0,
            false,
            4,
        )
        .unwrap();
        let mut b = fresh();
        let mut refs: Vec<&mut OptimizerState> = b.iter_mut().collect();
        let global =
            fedavg_round(&net, &start, &members, &mut refs, &train_cfg(2), None, 4).unwrap();
        assert_eq!(clustered.params, global);
    }
}
