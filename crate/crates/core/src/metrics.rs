//! Accuracy, fairness and communication accounting, and the result-row CSV
//! format.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bytes charged per transmitted parameter (32-bit floats).
pub const BYTES_PER_PARAM: usize = 4;
/// Bytes per reported megabyte.
pub const BYTES_PER_MB: f64 = 1024.0 * 1024.0;

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation of per-client accuracies.
pub fn fairness(accuracies: &[f64]) -> f64 {
    if accuracies.is_empty() {
        return 0.0;
    }
    if accuracies.iter().all(|&a| a == accuracies[0]) {
        return 0.0;
    }
    let m = mean(accuracies);
    (accuracies.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / accuracies.len() as f64).sqrt()
}

/// Accuracy-to-fairness ratio μ/σ; `+inf` when σ is zero.
pub fn score_ratio(mu: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        f64::INFINITY
    } else {
        mu / sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Server to client.
    Down,
    /// Client to server.
    Up,
}

/// One model exchange between the server and a client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transmission {
    pub round: usize,
    pub client: usize,
    pub direction: Direction,
    /// Parameters carried (active entries of a sparse model).
    pub params: usize,
    /// Additional payload, e.g. a mask bitmap.
    pub extra_bytes: usize,
}

impl Transmission {
    pub fn bytes(&self) -> usize {
        self.params * BYTES_PER_PARAM + self.extra_bytes
    }
}

/// Total volume in MB: Σ (params · 4 + extra) / 1024².
pub fn comm_cost(transmissions: &[Transmission]) -> f64 {
    transmissions.iter().map(|t| t.bytes() as f64).sum::<f64>() / BYTES_PER_MB
}

/// Training phase a round belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Warmup,
    Stabilize,
    PruneHeal,
    FineTune,
}

/// Snapshot after one communication round (or after fine-tuning).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub phase: Phase,
    /// Per-client test accuracy; absent on rounds that were not evaluated.
    pub accuracies: Option<Vec<f64>>,
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub round_mb: f64,
    /// Cumulative communication C_total in MB.
    pub total_mb: f64,
    /// Sparsity of each cluster's (or the global) mask.
    pub cluster_sparsity: Vec<f64>,
    /// Mean over clients of the sparsity of the model they hold.
    pub sparsity: f64,
}

impl RoundMetrics {
    pub fn set_accuracies(&mut self, accuracies: Vec<f64>) {
        self.mu = Some(mean(&accuracies));
        self.sigma = Some(fairness(&accuracies));
        self.accuracies = Some(accuracies);
    }
}

/// One CSV line: `method,dataset,scenario,seed,round,mu,sigma,sparsity,comm_mb`.
/// `round` is a round number or `final` for the summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub dataset: String,
    pub scenario: String,
    pub seed: u64,
    pub round: String,
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub sparsity: f64,
    pub comm_mb: f64,
}

pub const FINAL_ROUND: &str = "final";

impl ResultRow {
    pub fn is_final(&self) -> bool {
        self.round == FINAL_ROUND
    }
}

pub fn write_rows<W: Write>(writer: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Serde(e.to_string()))?;
    Ok(())
}

pub fn rows_to_csv(rows: &[ResultRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_rows(&mut buf, rows)?;
    String::from_utf8(buf).map_err(|e| Error::Serde(e.to_string()))
}

pub fn read_rows<R: Read>(reader: R) -> Result<Vec<ResultRow>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(|e| Error::data(format!("bad result row: {e}"))))
        .collect()
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        Self {
            mean: mean(values),
            std: fairness(values),
        }
    }
}

/// Final-row aggregate over seeds for one (method, dataset, scenario).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub dataset: String,
    pub scenario: String,
    pub runs: usize,
    pub mu: Stat,
    pub sigma: Stat,
    pub comm_mb: Stat,
    /// μ/σ of the mean accuracy and mean fairness.
    pub score: f64,
}

/// Groups final rows by (method, dataset, scenario) and averages over seeds.
pub fn report(rows: &[ResultRow]) -> Result<Vec<ReportRow>> {
    let mut groups: BTreeMap<(String, String, String), Vec<&ResultRow>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.is_final()) {
        groups
            .entry((
                row.method.clone(),
                row.dataset.clone(),
                row.scenario.clone(),
            ))
            .or_default()
            .push(row);
    }
    groups
        .into_iter()
        .map(|((method, dataset, scenario), rows)| {
            let pick = |f: fn(&ResultRow) -> Option<f64>, what: &str| -> Result<Vec<f64>> {
                rows.iter()
                    .map(|r| {
                        f(r).ok_or_else(|| {
                            Error::data(format!(
                                "{method}/{scenario} seed {}: missing {what}",
                                r.seed
                            ))
                        })
                    })
                    .collect()
            };
            let mu = Stat::of(&pick(|r| r.mu, "mu")?);
            let sigma = Stat::of(&pick(|r| r.sigma, "sigma")?);
            let comm = Stat::of(&rows.iter().map(|r| r.comm_mb).collect::<Vec<_>>());
            Ok(ReportRow {
                score: score_ratio(mu.mean, sigma.mean),
                method,
                dataset,
                scenario,
                runs: rows.len(),
                mu,
                sigma,
                comm_mb: comm,
            })
        })
        .collect()
}
