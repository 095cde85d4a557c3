use serde::{Deserialize, Serialize};

use super::ClientDataset;
use crate::error::{Error, Result};

/// Quantity, label and feature skew across a client population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityReport {
    pub clients: usize,
    /// Population CV of per-client sample counts, in percent.
    pub sample_count_cv_pct: f64,
    pub clients_missing_classes: usize,
    pub missing_class_rate_pct: f64,
    /// Mean over channels of the CV of per-client channel means, in percent.
    pub feature_cv_pct: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn cv_pct(values: &[f64]) -> f64 {
    let (mean, std) = mean_std(values);
    if std == 0.0 {
        0.0
    } else if mean.abs() < 1e-12 {
        f64::INFINITY
    } else {
        100.0 * std / mean.abs()
    }
}

pub fn heterogeneity_report(
    clients: &[ClientDataset],
    num_classes: usize,
) -> Result<HeterogeneityReport> {
    if clients.len() < 2 {
        return Err(Error::data(
            "heterogeneity report needs at least two clients",
        ));
    }
    let counts: Vec<f64> = clients.iter().map(|c| c.total_size() as f64).collect();
    let missing = clients
        .iter()
        .filter(|c| {
            let mut seen = c.train.class_set();
            seen.extend(c.test.class_set());
            seen.len() < num_classes
        })
        .count();

    let channels = clients[0].train.channels();
    let mut per_channel = vec![Vec::with_capacity(clients.len()); channels];
    for c in clients {
        let mut sums = vec![0.0; channels];
        let mut rows = 0usize;
        for split in [&c.train, &c.test] {
            for row in split.inputs().chunks(channels) {
                for (s, v) in sums.iter_mut().zip(row) {
                    *s += v;
                }
                rows += 1;
            }
        }
        for (ch, s) in sums.into_iter().enumerate() {
            per_channel[ch].push(s / rows.max(1) as f64);
        }
    }
    let feature_cv = per_channel.iter().map(|m| cv_pct(m)).sum::<f64>() / channels.max(1) as f64;

    Ok(HeterogeneityReport {
        clients: clients.len(),
        sample_count_cv_pct: cv_pct(&counts),
        clients_missing_classes: missing,
        missing_class_rate_pct: 100.0 * missing as f64 / clients.len() as f64,
        feature_cv_pct: feature_cv,
    })
}
