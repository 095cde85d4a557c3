use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Layout, ParamSet};

/// Binary keep/prune flags over the prunable positions of a layout.
///
/// `true` means active. Position `i` of the mask refers to the `i`-th entry
/// of [`Layout::prunable_indices`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mask {
    bits: Vec<bool>,
    active: usize,
}

impl Mask {
    pub fn ones(len: usize) -> Self {
        Self {
            bits: vec![true; len],
            active: len,
        }
    }

    pub fn for_layout(layout: &Layout) -> Self {
        Self::ones(layout.prunable_len())
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        let active = bits.iter().filter(|&&b| b).count();
        Self { bits, active }
    }

    /// N_total: number of prunable positions.
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// N_active.
    pub fn active_count(&self) -> usize {
        self.active
    }

    pub fn pruned_count(&self) -> usize {
        self.bits.len() - self.active
    }

    /// Fraction of prunable positions that are pruned.
    pub fn sparsity(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.pruned_count() as f64 / self.bits.len() as f64
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, active: bool) {
        match (self.bits[i], active) {
            (false, true) => self.active += 1,
            (true, false) => self.active -= 1,
            _ => {}
        }
        self.bits[i] = active;
    }

    /// Number of positions whose state differs.
    pub fn hamming(&self, other: &Mask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a != b)
            .count()
    }

    pub fn check_layout(&self, layout: &Layout) -> Result<()> {
        if self.bits.len() != layout.prunable_len() {
            return Err(Error::shape(format!(
                "mask covers {} positions, layout has {} prunable",
                self.bits.len(),
                layout.prunable_len()
            )));
        }
        Ok(())
    }

    /// Per-parameter keep flags aligned to the full layout (non-prunable
    /// positions are always kept).
    pub fn param_keep(&self, layout: &Layout) -> Result<Vec<bool>> {
        self.check_layout(layout)?;
        let mut keep = vec![true; layout.total()];
        for (bit, idx) in self.bits.iter().zip(layout.prunable_indices()) {
            keep[idx] = *bit;
        }
        Ok(keep)
    }

    /// Zeroes every pruned position of `params` (w ⊙ M).
    pub fn apply(&self, params: &mut ParamSet) -> Result<()> {
        let layout = params.layout().clone();
        self.check_layout(&layout)?;
        let values = params.values_mut();
        for (bit, idx) in self.bits.iter().zip(layout.prunable_indices()) {
            if !bit {
                values[idx] = 0.0;
            }
        }
        Ok(())
    }

    /// True when every pruned position of `params` is exactly zero.
    pub fn is_respected_by(&self, params: &ParamSet) -> bool {
        let layout = params.layout();
        self.bits.len() == layout.prunable_len()
            && self
                .bits
                .iter()
                .zip(layout.prunable_indices())
                .all(|(bit, idx)| *bit || params.values()[idx] == 0.0)
    }

    /// Parameters a sparse transmission carries: active prunable entries plus
    /// every non-prunable entry.
    pub fn transmitted_params(&self, layout: &Layout) -> usize {
        layout.total() - self.pruned_count()
    }
}
