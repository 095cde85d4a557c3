use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClientDataset, Samples};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

/// Parameters of the synthetic clustered population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_clusters: usize,
    pub clients_per_cluster: usize,
    pub samples_per_client: usize,
    pub window: usize,
    pub channels: usize,
    pub classes: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_clusters: 3,
            clients_per_cluster: 4,
            samples_per_client: 60,
            window: 32,
            channels: 3,
            classes: 3,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.num_clusters,
            self.clients_per_cluster,
            self.samples_per_client,
            self.window,
            self.channels,
            self.classes,
        ];
        if counts.contains(&0) {
            return Err(Error::config(
                "synthetic population counts must be positive",
            ));
        }
        if self.noise.is_nan() || self.noise < 0.0 {
            return Err(Error::config("noise scale must be non-negative"));
        }
        Ok(())
    }

    /// Waveform used by `class` inside `cluster`.
    ///
    /// Clusters share one bank of `classes` waveforms but relabel it with a
    /// cluster-specific cyclic shift, so the label of a waveform depends on
    /// which cluster produced it.
    pub fn waveform_index(&self, cluster: usize, class: usize) -> usize {
        (class + cluster) % self.classes
    }

    /// Noise-free template of `waveform`.
    pub fn template(&self, waveform: usize) -> Vec<f64> {
        let freq = 1.0 + waveform as f64;
        let mut out = Vec::with_capacity(self.window * self.channels);
        for t in 0..self.window {
            let phase_t = 2.0 * PI * freq * t as f64 / self.window as f64;
            for c in 0..self.channels {
                let phase_c = c as f64 * PI / 3.0;
                out.push((phase_t + phase_c).sin() + 0.25 * (waveform as f64 - 1.0));
            }
        }
        out
    }
}

/// Generates `num_clusters * clients_per_cluster` clients with ground-truth
/// cluster ids in `group`. Labels are balanced per client. All samples land
/// in the train split.
pub fn synth_population(cfg: &SynthConfig) -> Result<Vec<ClientDataset>> {
    cfg.validate()?;
    let templates: Vec<Vec<f64>> = (0..cfg.classes).map(|w| cfg.template(w)).collect();
    let normal = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::config(e.to_string()))?;
    let mut clients = Vec::with_capacity(cfg.num_clusters * cfg.clients_per_cluster);
    for cluster in 0..cfg.num_clusters {
        for j in 0..cfg.clients_per_cluster {
            let id = cluster * cfg.clients_per_cluster + j;
            let mut rng = rng_for(cfg.seed, &[stream::SYNTH, id as u64]);
            let mut labels: Vec<usize> = (0..cfg.samples_per_client)
                .map(|i| i % cfg.classes)
                .collect();
            labels.shuffle(&mut rng);
            let mut samples = Samples::new(cfg.window, cfg.channels);
            let mut buf = vec![0.0; cfg.window * cfg.channels];
            for &y in &labels {
                let template = &templates[cfg.waveform_index(cluster, y)];
                for (b, t) in buf.iter_mut().zip(template) {
                    *b = if cfg.noise > 0.0 {
                        t + normal.sample(&mut rng)
                    } else {
                        *t
                    };
                }
                samples.push(&buf, y);
            }
            let mut ds = ClientDataset::new(id, samples);
            ds.group = Some(cluster);
            clients.push(ds);
        }
    }
    Ok(clients)
}
