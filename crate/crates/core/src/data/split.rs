use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{ClientDataset, Samples};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

/// Test quota per class: floors of `n_c * fraction`, topped up by largest
/// remainder until the total reaches `round(n * fraction)`. Every class keeps
/// at least one training sample; singleton classes stay entirely in train.
fn test_quotas(counts: &[(usize, usize)], fraction: f64) -> Vec<usize> {
    let n: usize = counts.iter().map(|&(_, c)| c).sum();
    let capacity: usize = counts.iter().map(|&(_, c)| c.saturating_sub(1)).sum();
    let target = ((n as f64 * fraction).round() as usize).min(capacity);
    let mut quotas: Vec<usize> = counts
        .iter()
        .map(|&(_, c)| ((c as f64 * fraction).floor() as usize).min(c.saturating_sub(1)))
        .collect();
    let mut remainders: Vec<f64> = counts
        .iter()
        .map(|&(_, c)| {
            let exact = c as f64 * fraction;
            exact - exact.floor()
        })
        .collect();
    let mut assigned: usize = quotas.iter().sum();
    while assigned < target {
        let pick = (0..counts.len())
            .filter(|&i| quotas[i] < counts[i].1.saturating_sub(1))
            .max_by(|&a, &b| {
                remainders[a]
                    .total_cmp(&remainders[b])
                    .then_with(|| b.cmp(&a))
            });
        let Some(i) = pick else { break };
        quotas[i] += 1;
        remainders[i] = -1.0;
        assigned += 1;
    }
    quotas
}

/// Stratified train/test split of all of a client's samples.
///
/// Train and test are pooled first, so re-splitting is well defined. Sample
/// order inside each split follows the original pooled order.
pub fn split_client(ds: &ClientDataset, test_fraction: f64, seed: u64) -> Result<ClientDataset> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let mut pooled = ds.train.clone();
    pooled.extend(&ds.test);

    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in pooled.labels().iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let counts: Vec<(usize, usize)> = by_class.iter().map(|(&y, v)| (y, v.len())).collect();
    let quotas = test_quotas(&counts, test_fraction);

    let mut is_test = vec![false; pooled.len()];
    for ((&class, members), quota) in by_class.iter().zip(quotas) {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng_for(
            seed,
            &[stream::SPLIT, ds.id as u64, class as u64],
        ));
        for &i in &shuffled[..quota] {
            is_test[i] = true;
        }
    }
    let (test_idx, train_idx): (Vec<usize>, Vec<usize>) =
        (0..pooled.len()).partition(|&i| is_test[i]);
    Ok(ClientDataset {
        id: ds.id,
        train: pooled.select(&train_idx),
        test: pooled.select(&test_idx),
        group: ds.group,
    })
}

fn channel_stats(samples: &Samples) -> Vec<(f64, f64)> {
    let ch = samples.channels();
    let mut sum = vec![0.0; ch];
    let mut sq = vec![0.0; ch];
    let rows = samples.inputs().len() / ch.max(1);
    for row in samples.inputs().chunks(ch) {
        for (c, v) in row.iter().enumerate() {
            sum[c] += v;
            sq[c] += v * v;
        }
    }
    (0..ch)
        .map(|c| {
            let mean = sum[c] / rows as f64;
            let var = (sq[c] / rows as f64 - mean * mean).max(0.0);
            let std = var.sqrt();
            (mean, if std > 1e-12 { std } else { 1.0 })
        })
        .collect()
}

/// Per-channel z-scoring with statistics from the client's own train split.
pub fn standardize_per_client(ds: &mut ClientDataset) {
    if ds.train.is_empty() {
        return;
    }
    let stats = channel_stats(&ds.train);
    let ch = stats.len();
    for samples in [&mut ds.train, &mut ds.test] {
        for row in samples.inputs_mut().chunks_mut(ch) {
            for (v, (mean, std)) in row.iter_mut().zip(&stats) {
                *v = (*v - mean) / std;
            }
        }
    }
}
