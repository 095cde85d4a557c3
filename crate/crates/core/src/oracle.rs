//! Slow, independent reference implementations used to cross-check the
//! production code paths.

#![allow(clippy::needless_range_loop)]

use rand::Rng;
use serde::Serialize;

use crate::clustering::{agglomerative_cluster, DistanceMatrix};
use crate::error::Result;
use crate::nn::{ArchitectureSpec, Batch, Mode, Network, OptimizerState, ParamSet, Proximal};
use crate::pruning::{
    coherence_score, consistency_score, importance, magnitude_score, plan_step, prune_heal_step,
    ClusterSignals, Mask, PruneSchedule, ScoreWeights,
};
use crate::rng::rng_for;

/// Largest relative disagreement between analytic gradients and central
/// differences of the loss.
///
/// Relative error is `|a − n| / max(|a|, |n|, floor)`; the floor keeps
/// components that are zero in both from dividing by zero.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    net: &Network,
    params: &ParamSet,
    inputs: &[f64],
    labels: &[usize],
    proximal: Option<Proximal>,
    mode: Mode,
    step: f64,
    floor: f64,
) -> Result<f64> {
    let batch = Batch::new(inputs, net.spec().sample_len())?;
    let (_, analytic) = net.loss_and_grad(params, &batch, labels, proximal, None, mode)?;
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + step;
        let (up, _) = net.loss_and_grad(&probe, &batch, labels, proximal, None, mode)?;
        probe.values_mut()[i] = orig - step;
        let (down, _) = net.loss_and_grad(&probe, &batch, labels, proximal, None, mode)?;
        probe.values_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic.values()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// He-initialized kernels with small random biases, so no pre-activation
/// sits exactly on a ReLU kink when all of its inputs are dropped.
pub fn random_params(net: &Network, seed: u64) -> ParamSet {
    let mut params = net.init_params(seed);
    let mut rng = rng_for(seed, &[0xB1]);
    let layout = params.layout().clone();
    for slot in layout.slots().iter().filter(|s| !s.prunable) {
        for v in &mut params.values_mut()[slot.range()] {
            *v = rng.random_range(-0.2..0.2);
        }
    }
    params
}

/// Greedy average linkage recomputed from raw pairwise distances at every
/// merge. Returns member lists ordered by smallest member.
pub fn brute_force_average_linkage(dist: &[Vec<f64>], k: usize) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = (0..dist.len()).map(|i| vec![i]).collect();
    while clusters.len() > k.max(1) {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let mut total = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        total += dist[i][j];
                    }
                }
                let avg = total / (clusters[a].len() * clusters[b].len()) as f64;
                if best.is_none_or(|(d, _, _)| avg < d) {
                    best = Some((avg, a, b));
                }
            }
        }
        let (_, a, b) = best.expect("at least two clusters");
        let moved = clusters.remove(b);
        clusters[a].extend(moved);
        clusters[a].sort_unstable();
        clusters.sort_by_key(|c| c[0]);
    }
    clusters
}

/// Score components computed one position at a time with plain loops.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarScores {
    pub magnitude: Vec<f64>,
    pub coherence: Vec<f64>,
    pub consistency: Vec<f64>,
    pub importance: Vec<f64>,
}

pub fn scalar_scores(
    prunable: &[f64],
    client_params: &[Vec<f64>],
    client_grads: &[Vec<f64>],
    weights: &ScoreWeights,
) -> ScalarScores {
    let n = prunable.len();
    let mut max = 0.0f64;
    for j in 0..n {
        if prunable[j].abs() > max {
            max = prunable[j].abs();
        }
    }
    let mut out = ScalarScores {
        magnitude: vec![0.0; n],
        coherence: vec![0.0; n],
        consistency: vec![0.0; n],
        importance: vec![0.0; n],
    };
    for j in 0..n {
        let mag = if max > 0.0 {
            prunable[j].abs() / max
        } else {
            0.0
        };

        let k = client_params.len() as f64;
        let mut mean = 0.0;
        for c in client_params {
            mean += c[j];
        }
        mean /= k;
        let mut var = 0.0;
        for c in client_params {
            var += (c[j] - mean).powi(2);
        }
        var /= k;
        let coh = 1.0 / (1.0 + var);

        let mut signs = 0i64;
        for g in client_grads {
            if g[j] > 0.0 {
                signs += 1;
            } else if g[j] < 0.0 {
                signs -= 1;
            }
        }
        let con = (signs as f64 / client_grads.len() as f64).abs();

        out.magnitude[j] = mag;
        out.coherence[j] = coh;
        out.consistency[j] = con;
        out.importance[j] = weights.alpha * mag + weights.beta * coh + weights.gamma * con;
    }
    out
}

/// Outcome of one built-in oracle comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl OracleCheck {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

fn random_distance_matrix(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, &[0xC1]);
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = rng.random_range(0.0..2.0);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

fn check_gradients(seed: u64) -> Result<OracleCheck> {
    let spec = ArchitectureSpec::scaled_har(18, 2, 3, 3, 4);
    let net = Network::new(&spec)?;
    let params = random_params(&net, seed);
    let mut rng = rng_for(seed, &[0x6C]);
    let inputs: Vec<f64> = (0..3 * spec.sample_len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let labels = [0, 2, 1];
    let reference = net.init_params(seed + 1);
    let proximal = Proximal {
        reference: &reference,
        lambda: 0.3,
    };
    let plain = gradient_check(
        &net,
        &params,
        &inputs,
        &labels,
        None,
        Mode::Eval,
        1e-5,
        1e-6,
    )?;
    let reg = gradient_check(
        &net,
        &params,
        &inputs,
        &labels,
        Some(proximal),
        Mode::Train { seed },
        1e-5,
        1e-6,
    )?;
    let worst = plain.max(reg);
    Ok(OracleCheck::new(
        "gradient-finite-difference",
        worst < 1e-4,
        format!("max relative error {worst:.3e}"),
    ))
}

fn check_clustering(seed: u64) -> Result<OracleCheck> {
    let mut mismatches = 0;
    for trial in 0..50u64 {
        let n = 2 + (trial % 7) as usize;
        let rows = random_distance_matrix(n, seed.wrapping_add(trial));
        let k = 1 + (trial as usize % n);
        let fast = agglomerative_cluster(&DistanceMatrix::from_rows(&rows)?, k)?;
        if fast.all_members() != brute_force_average_linkage(&rows, k).as_slice() {
            mismatches += 1;
        }
    }
    Ok(OracleCheck::new(
        "average-linkage-brute-force",
        mismatches == 0,
        format!("{mismatches} of 50 random matrices disagree"),
    ))
}

fn check_scores(seed: u64) -> Result<OracleCheck> {
    let mut rng = rng_for(seed, &[0x5C]);
    let n = 64;
    let mut vec_of = |len: usize| -> Vec<f64> {
        (0..len)
            .map(|_| {
                if rng.random_bool(0.1) {
                    0.0
                } else {
                    rng.random_range(-2.0..2.0)
                }
            })
            .collect()
    };
    let prunable = vec_of(n);
    let params: Vec<Vec<f64>> = (0..4).map(|_| vec_of(n)).collect();
    let grads: Vec<Vec<f64>> = (0..4).map(|_| vec_of(n)).collect();
    let weights = ScoreWeights::default();
    let signals = ClusterSignals::new(params.clone(), grads.clone());
    let reference = scalar_scores(&prunable, &params, &grads, &weights);
    let diff = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max)
    };
    let worst = [
        diff(&magnitude_score(&prunable), &reference.magnitude),
        diff(&coherence_score(&signals)?, &reference.coherence),
        diff(&consistency_score(&signals)?, &reference.consistency),
        diff(
            &importance(&prunable, &signals, &weights)?,
            &reference.importance,
        ),
    ]
    .into_iter()
    .fold(0.0f64, f64::max);
    Ok(OracleCheck::new(
        "importance-scalar-loop",
        worst <= 1e-12,
        format!("max abs difference {worst:.3e}"),
    ))
}

fn check_prune_arithmetic() -> Result<OracleCheck> {
    let schedule = PruneSchedule {
        start_sparsity: 0.3,
        target_sparsity: 0.7,
        frequency: 1,
        churn: 0.05,
        rounds: 8,
    };
    let mask = Mask::from_bits((0..100).map(|i| i >= 30).collect());
    let plan = plan_step(&mask, &schedule, 4);
    let scores: Vec<f64> = (0..100).map(|i| i as f64).collect();
    let (next, _) = prune_heal_step(&mask, &scores, &scores, &schedule, 4)?;
    let passed = plan.n_deficit == 10
        && plan.n_churn == 3
        && plan.n_prune == 13
        && plan.n_grow == 3
        && (next.sparsity() - 0.40).abs() < 1e-12;
    Ok(OracleCheck::new(
        "prune-heal-arithmetic",
        passed,
        format!(
            "deficit {} churn {} prune {} grow {} -> sparsity {:.2}",
            plan.n_deficit,
            plan.n_churn,
            plan.n_prune,
            plan.n_grow,
            next.sparsity()
        ),
    ))
}

fn check_adam_scalar() -> Result<OracleCheck> {
    let layout = std::sync::Arc::new(crate::nn::Layout::from_slots(vec![(
        "w".into(),
        vec![1],
        false,
    )]));
    let mut w = ParamSet::from_values(layout.clone(), vec![1.0])?;
    let g = crate::nn::GradientSet::from_values(layout, vec![1.0])?;
    let mut state = OptimizerState::new(1, 1e-3);
    state.step(&mut w, &g, None)?;
    let expected = 1.0 - 1e-3 * (1.0 / (1.0 + 1e-8));
    let err = (w.values()[0] - expected).abs();
    Ok(OracleCheck::new(
        "adam-first-step",
        err < 1e-15,
        format!("w = {:.12}", w.values()[0]),
    ))
}

/// Runs every built-in oracle comparison.
pub fn run_oracles(seed: u64) -> Result<Vec<OracleCheck>> {
    Ok(vec![
        check_gradients(seed)?,
        check_clustering(seed)?,
        check_scores(seed)?,
        check_prune_arithmetic()?,
        check_adam_scalar()?,
    ])
}
