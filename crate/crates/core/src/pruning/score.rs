use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{GradientSet, ParamSet};

/// Mixing weights of the importance score: α·Mag + β·Coh + γ·Con.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl ScoreWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.alpha, self.beta, self.gamma];
        if parts.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::config(format!(
                "score weights must be non-negative: {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "score weights sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// The seven ablation combinations, in table order.
    pub fn ablation_grid() -> [ScoreWeights; 7] {
        [
            (1.0, 0.0, 0.0),
            (0.0, 1.0, 0.0),
            (0.0, 0.0, 1.0),
            (0.5, 0.25, 0.25),
            (0.25, 0.5, 0.25),
            (0.25, 0.25, 0.5),
            (0.33, 0.33, 0.34),
        ]
        .map(|(alpha, beta, gamma)| ScoreWeights { alpha, beta, gamma })
    }
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            beta: 0.25,
            gamma: 0.5,
        }
    }
}

/// Per-client vectors of one cluster, restricted to prunable positions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterSignals {
    /// Locally trained parameter values returned by each member.
    pub client_params: Vec<Vec<f64>>,
    /// Each member's accumulated gradient.
    pub client_grads: Vec<Vec<f64>>,
}

impl ClusterSignals {
    pub fn new(client_params: Vec<Vec<f64>>, client_grads: Vec<Vec<f64>>) -> Self {
        Self {
            client_params,
            client_grads,
        }
    }

    pub fn from_sets(params: &[ParamSet], grads: &[GradientSet]) -> Self {
        Self {
            client_params: params.iter().map(ParamSet::prunable_values).collect(),
            client_grads: grads.iter().map(GradientSet::prunable_values).collect(),
        }
    }

    fn check(vectors: &[Vec<f64>], what: &str) -> Result<usize> {
        let Some(first) = vectors.first() else {
            return Err(Error::config(format!("no client {what} vectors")));
        };
        if vectors.iter().any(|v| v.len() != first.len()) {
            return Err(Error::shape(format!(
                "client {what} vectors differ in length"
            )));
        }
        Ok(first.len())
    }
}

/// |w_j| / max_u |u| over prunable values; all zeros if the max is zero.
pub fn magnitude_score(prunable: &[f64]) -> Vec<f64> {
    let max = prunable.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return vec![0.0; prunable.len()];
    }
    prunable.iter().map(|v| v.abs() / max).collect()
}

/// 1 / (1 + population variance across members).
pub fn coherence_score(signals: &ClusterSignals) -> Result<Vec<f64>> {
    let len = ClusterSignals::check(&signals.client_params, "parameter")?;
    let n = signals.client_params.len() as f64;
    let mut mean = vec![0.0; len];
    for v in &signals.client_params {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; len];
    for v in &signals.client_params {
        for ((s, x), m) in var.iter_mut().zip(v).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    Ok(var.into_iter().map(|s| 1.0 / (1.0 + s / n)).collect())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// |mean over members of sign(gradient)|, with sign(0) = 0.
pub fn consistency_score(signals: &ClusterSignals) -> Result<Vec<f64>> {
    let len = ClusterSignals::check(&signals.client_grads, "gradient")?;
    let n = signals.client_grads.len() as f64;
    let mut acc = vec![0.0; len];
    for g in &signals.client_grads {
        for (a, x) in acc.iter_mut().zip(g) {
            *a += sign(*x);
        }
    }
    Ok(acc.into_iter().map(|a| (a / n).abs()).collect())
}

/// Convex combination of magnitude, coherence and consistency.
pub fn importance(
    prunable: &[f64],
    signals: &ClusterSignals,
    weights: &ScoreWeights,
) -> Result<Vec<f64>> {
    weights.validate()?;
    let mag = magnitude_score(prunable);
    let coh = coherence_score(signals)?;
    let con = consistency_score(signals)?;
    if coh.len() != mag.len() || con.len() != mag.len() {
        return Err(Error::shape("signals do not match the parameter vector"));
    }
    Ok(mag
        .iter()
        .zip(&coh)
        .zip(&con)
        .map(|((m, h), c)| weights.alpha * m + weights.beta * h + weights.gamma * c)
        .collect())
}

/// |mean over members of the accumulated gradient|: the regrowth ranking.
pub fn regrowth_signal(signals: &ClusterSignals) -> Result<Vec<f64>> {
    let len = ClusterSignals::check(&signals.client_grads, "gradient")?;
    let n = signals.client_grads.len() as f64;
    let mut acc = vec![0.0; len];
    for g in &signals.client_grads {
        for (a, x) in acc.iter_mut().zip(g) {
            *a += x;
        }
    }
    Ok(acc.into_iter().map(|a| (a / n).abs()).collect())
}
