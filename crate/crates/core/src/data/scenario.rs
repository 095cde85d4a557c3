use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ClientDataset;
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Standard,
    /// A fraction of clients get part of their train labels resampled.
    NoisyClients,
    /// A fraction of clients get all of their train labels resampled.
    Drift,
    /// Each client keeps at most `classes_per_client` classes.
    NonIid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Fraction of clients selected for label corruption.
    pub affected_fraction: f64,
    /// Fraction of an affected client's train labels that get resampled.
    pub corruption_rate: f64,
    pub classes_per_client: usize,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Standard,
            affected_fraction: 0.4,
            corruption_rate: 0.3,
            classes_per_client: 1,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn standard() -> Self {
        Self::default()
    }

    pub fn noisy_clients(seed: u64) -> Self {
        Self {
            kind: ScenarioKind::NoisyClients,
            seed,
            ..Self::default()
        }
    }

    pub fn drift(seed: u64) -> Self {
        Self {
            kind: ScenarioKind::Drift,
            corruption_rate: 1.0,
            seed,
            ..Self::default()
        }
    }

    pub fn non_iid(classes_per_client: usize, seed: u64) -> Self {
        Self {
            kind: ScenarioKind::NonIid,
            classes_per_client,
            seed,
            ..Self::default()
        }
    }

    /// Label-corruption rate actually applied (drift is always total).
    pub fn effective_rate(&self) -> f64 {
        match self.kind {
            ScenarioKind::Drift => 1.0,
            _ => self.corruption_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("affected_fraction", self.affected_fraction),
            ("corruption_rate", self.corruption_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("scenario {name} {v} outside [0,1]")));
            }
        }
        if self.kind == ScenarioKind::NonIid && self.classes_per_client < 1 {
            return Err(Error::config("classes_per_client must be at least 1"));
        }
        Ok(())
    }

    /// Number of affected clients out of `n`: floor of the fraction.
    pub fn affected_count(&self, n: usize) -> usize {
        (self.affected_fraction * n as f64 + 1e-9).floor() as usize
    }
}

impl fmt::Display for ScenarioSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ScenarioKind::Standard => write!(f, "standard"),
            ScenarioKind::NoisyClients => write!(f, "noisy-clients"),
            ScenarioKind::Drift => write!(f, "drift"),
            ScenarioKind::NonIid => write!(f, "non-iid-{}", self.classes_per_client),
        }
    }
}

/// Applies a heterogeneity scenario.
///
/// Label corruption touches train labels only; features are never modified.
/// The non-IID restriction discards other-class samples from both splits.
/// Returns the indices (into `clients`) of corrupted clients alongside the
/// new population.
pub fn apply_scenario(
    clients: &[ClientDataset],
    spec: &ScenarioSpec,
    num_classes: usize,
) -> Result<(Vec<ClientDataset>, Vec<usize>)> {
    spec.validate()?;
    let mut out = clients.to_vec();
    let mut affected = Vec::new();
    match spec.kind {
        ScenarioKind::Standard => {}
        ScenarioKind::NoisyClients | ScenarioKind::Drift => {
            let mut order: Vec<usize> = (0..out.len()).collect();
            order.shuffle(&mut rng_for(spec.seed, &[stream::SCENARIO]));
            affected = order[..spec.affected_count(out.len())].to_vec();
            affected.sort_unstable();
            let rate = spec.effective_rate();
            for &ci in &affected {
                let ds = &mut out[ci];
                let mut rng = rng_for(spec.seed, &[stream::SCENARIO, 1, ds.id as u64]);
                let n = ds.train.len();
                let k = (rate * n as f64 + 1e-9).floor() as usize;
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(&mut rng);
                let labels = ds.train.labels_mut();
                for &i in &idx[..k] {
                    labels[i] = rng.random_range(0..num_classes);
                }
            }
        }
        ScenarioKind::NonIid => {
            for ds in out.iter_mut() {
                let mut rng = rng_for(spec.seed, &[stream::SCENARIO, 2, ds.id as u64]);
                let train_classes = ds.train.class_set();
                let test_classes = ds.test.class_set();
                // prefer classes that can also be evaluated
                let both: Vec<usize> = train_classes.intersection(&test_classes).copied().collect();
                let pool: Vec<usize> = if both.is_empty() {
                    train_classes.into_iter().collect()
                } else {
                    both
                };
                let k = spec.classes_per_client.min(pool.len());
                let keep: Vec<usize> = pool.choose_multiple(&mut rng, k).copied().collect();
                let filter = |s: &super::Samples| {
                    let idx: Vec<usize> = (0..s.len())
                        .filter(|&i| keep.contains(&s.labels()[i]))
                        .collect();
                    s.select(&idx)
                };
                ds.train = filter(&ds.train);
                ds.test = filter(&ds.test);
            }
        }
    }
    Ok((out, affected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Samples;

    fn population(n: usize) -> Vec<ClientDataset> {
        (0..n)
            .map(|id| {
                let mut train = Samples::new(2, 1);
                let mut test = Samples::new(2, 1);
                for i in 0..20 {
                    train.push(&[i as f64, id as f64], i % 3);
                    if i < 6 {
                        test.push(&[-(i as f64), id as f64], i % 3);
                    }
                }
                ClientDataset {
                    id,
                    train,
                    test,
                    group: None,
                }
            })
            .collect()
    }

    #[test]
    fn standard_is_identity() {
        let pop = population(5);
        let (out, affected) = apply_scenario(&pop, &ScenarioSpec::standard(), 3).unwrap();
        assert_eq!(out, pop);
        assert!(affected.is_empty());
    }

    #[test]
    fn drift_corrupts_floor_of_forty_percent() {
        let pop = population(30);
        let (out, affected) = apply_scenario(&pop, &ScenarioSpec::drift(4), 3).unwrap();
        assert_eq!(affected.len(), 12);
        for (a, b) in pop.iter().zip(&out) {
            assert_eq!(a.train.inputs(), b.train.inputs());
            assert_eq!(a.test, b.test);
        }
        let unaffected: Vec<usize> = (0..30).filter(|i| !affected.contains(i)).collect();
        for i in unaffected {
            assert_eq!(pop[i], out[i]);
        }
    }

    #[test]
    fn noisy_clients_touch_thirty_percent_at_most() {
        let pop = population(10);
        let (out, affected) = apply_scenario(&pop, &ScenarioSpec::noisy_clients(2), 3).unwrap();
        assert_eq!(affected.len(), 4);
        for &i in &affected {
            let changed = pop[i]
                .train
                .labels()
                .iter()
                .zip(out[i].train.labels())
                .filter(|(a, b)| a != b)
                .count();
            assert!(changed <= 6);
        }
    }

    #[test]
    fn non_iid_k1_leaves_one_train_class() {
        let pop = population(8);
        let (out, _) = apply_scenario(&pop, &ScenarioSpec::non_iid(1, 3), 3).unwrap();
        for ds in &out {
            assert_eq!(ds.train.class_set().len(), 1);
            assert_eq!(ds.train.class_set(), ds.test.class_set());
        }
    }

    #[test]
    fn non_iid_k_above_class_count_keeps_everything() {
        let pop = population(3);
        let (out, _) = apply_scenario(&pop, &ScenarioSpec::non_iid(5, 3), 3).unwrap();
        assert_eq!(out, pop);
    }

    #[test]
    fn deterministic() {
        let pop = population(12);
        let spec = ScenarioSpec::noisy_clients(11);
        assert_eq!(
            apply_scenario(&pop, &spec, 3).unwrap(),
            apply_scenario(&pop, &spec, 3).unwrap()
        );
    }

    #[test]
    fn display_names() {
        assert_eq!(ScenarioSpec::non_iid(2, 0).to_string(), "non-iid-2");
        assert_eq!(ScenarioSpec::noisy_clients(0).to_string(), "noisy-clients");
    }
}
