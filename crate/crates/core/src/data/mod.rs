//! Client datasets: ingestion of the two HAR corpora, per-client splitting,
//! heterogeneity scenarios and a synthetic clustered population.

mod heterogeneity;
mod population;
mod scenario;
mod split;
mod synth;
mod ucihar;
mod wisdm;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use heterogeneity::{heterogeneity_report, HeterogeneityReport};
pub use population::{
    load_population, save_population, Population, POPULATION_FORMAT, POPULATION_VERSION,
};
pub use scenario::{apply_scenario, ScenarioKind, ScenarioSpec};
pub use split::{split_client, standardize_per_client};
pub use synth::{synth_population, SynthConfig};
pub use ucihar::{load_ucihar, UCIHAR_CHANNELS, UCIHAR_SIGNALS, UCIHAR_WINDOW};
pub use wisdm::{
    load_wisdm, parse_wisdm, windows_in_run, WisdmData, WISDM_ACTIVITIES, WISDM_STRIDE,
    WISDM_WINDOW,
};

/// Windows and integer labels, stored contiguously (time-major per window).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Samples {
    window: usize,
    channels: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

impl Samples {
    pub fn new(window: usize, channels: usize) -> Self {
        Self {
            window,
            channels,
            inputs: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_parts(
        window: usize,
        channels: usize,
        inputs: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if inputs.len() != labels.len() * window * channels {
            return Err(Error::shape(format!(
                "{} values for {} samples of ({window}, {channels})",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Self {
            window,
            channels,
            inputs,
            labels,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn sample_len(&self) -> usize {
        self.window * self.channels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn inputs_mut(&mut self) -> &mut [f64] {
        &mut self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [usize] {
        &mut self.labels
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.inputs[i * n..(i + 1) * n]
    }

    pub fn push(&mut self, sample: &[f64], label: usize) {
        assert_eq!(sample.len(), self.sample_len(), "sample shape");
        self.inputs.extend_from_slice(sample);
        self.labels.push(label);
    }

    /// Copies the selected samples into reusable buffers.
    pub fn gather(&self, indices: &[usize], inputs: &mut Vec<f64>, labels: &mut Vec<usize>) {
        inputs.clear();
        labels.clear();
        for &i in indices {
            inputs.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
    }

    pub fn select(&self, indices: &[usize]) -> Samples {
        let mut out = Samples::new(self.window, self.channels);
        for &i in indices {
            out.push(self.sample(i), self.labels[i]);
        }
        out
    }

    pub fn extend(&mut self, other: &Samples) {
        assert_eq!(
            (self.window, self.channels),
            (other.window, other.channels),
            "sample shape"
        );
        self.inputs.extend_from_slice(&other.inputs);
        self.labels.extend_from_slice(&other.labels);
    }

    pub fn class_set(&self) -> BTreeSet<usize> {
        self.labels.iter().copied().collect()
    }

    pub fn class_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// One client's private data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    /// Source identifier (user or subject id, or synthetic index).
    pub id: usize,
    pub train: Samples,
    pub test: Samples,
    /// Ground-truth latent group, known only for synthetic populations.
    pub group: Option<usize>,
}

impl ClientDataset {
    pub fn new(id: usize, train: Samples) -> Self {
        let test = Samples::new(train.window(), train.channels());
        Self {
            id,
            train,
            test,
            group: None,
        }
    }

    /// |D_k|: the number of training samples.
    pub fn train_size(&self) -> usize {
        self.train.len()
    }

    pub fn total_size(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::data(format!(
                "client {} has no training data",
                self.id
            )));
        }
        let bad = self
            .train
            .labels()
            .iter()
            .chain(self.test.labels())
            .find(|&&y| y >= num_classes);
        if let Some(y) = bad {
            return Err(Error::data(format!(
                "client {}: label {y} outside [0, {num_classes})",
                self.id
            )));
        }
        Ok(())
    }
}
