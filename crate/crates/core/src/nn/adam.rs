use serde::{Deserialize, Serialize};

use super::arch::{GradientSet, ParamSet};
use crate::error::{Error, Result};
use crate::pruning::Mask;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub learning_rate: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Zeroes both moments at the given flat parameter indices.
    pub fn reset_positions(&mut self, indices: impl IntoIterator<Item = usize>) {
        for i in indices {
            self.m[i] = 0.0;
            self.v[i] = 0.0;
        }
    }

    /// One Adam update in place. Pruned positions (mask bit 0) are forced to
    /// zero along with their moments.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &GradientSet,
        mask: Option<&Mask>,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::shape(format!(
                "adam: params {}, grads {}, state {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        let keep = match mask {
            Some(m) => Some(m.param_keep(params.layout())?),
            None => None,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let lr = self.learning_rate;
        let values = params.values_mut();
        for i in 0..values.len() {
            if let Some(keep) = &keep {
                if !keep[i] {
                    values[i] = 0.0;
                    self.m[i] = 0.0;
                    self.v[i] = 0.0;
                    continue;
                }
            }
            let g = grads.values()[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            values[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
        Ok(())
    }
}

/// Functional form of [`OptimizerState::step`].
pub fn adam_step(
    params: &ParamSet,
    grads: &GradientSet,
    state: &mut OptimizerState,
    mask: Option<&Mask>,
) -> Result<ParamSet> {
    let mut out = params.clone();
    state.step(&mut out, grads, mask)?;
    Ok(out)
}
