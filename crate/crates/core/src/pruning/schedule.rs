use serde::{Deserialize, Serialize};

use super::mask::Mask;
use super::score::{importance, ClusterSignals, ScoreWeights};
use crate::error::{Error, Result};

/// Sparsity trajectory of the prune-and-heal phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSchedule {
    pub start_sparsity: f64,
    pub target_sparsity: f64,
    /// Rounds between mask updates (f).
    pub frequency: usize,
    /// Fraction of active weights recycled per update (ρ).
    pub churn: f64,
    /// Length of the pruning phase in rounds (T₃).
    pub rounds: usize,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        Self {
            start_sparsity: 0.7,
            target_sparsity: 0.7,
            frequency: 5,
            churn: 0.05,
            rounds: 50,
        }
    }
}

impl PruneSchedule {
    pub fn validate(&self) -> Result<()> {
        let (s0, s1) = (self.start_sparsity, self.target_sparsity);
        if !(0.0 <= s0 && s0 <= s1 && s1 < 1.0) {
            return Err(Error::config(format!(
                "need 0 <= start ({s0}) <= target ({s1}) < 1"
            )));
        }
        if self.frequency == 0 {
            return Err(Error::config("pruning frequency must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.churn) {
            return Err(Error::config(format!(
                "churn {} outside [0, 1)",
                self.churn
            )));
        }
        Ok(())
    }

    pub fn is_update_round(&self, t: usize) -> bool {
        t >= 1 && t <= self.rounds && t.is_multiple_of(self.frequency)
    }

    /// First round that updates the mask, if any.
    pub fn first_update_round(&self) -> Option<usize> {
        (self.frequency <= self.rounds).then_some(self.frequency)
    }

    /// Scheduled steps remaining after round `t`, at least 1.
    pub fn remaining_steps(&self, t: usize) -> usize {
        (self.rounds.saturating_sub(t) / self.frequency).max(1)
    }
}

/// Record of one mask update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneStepLog {
    pub round: usize,
    pub cluster: usize,
    pub sparsity_before: f64,
    pub sparsity_after: f64,
    pub n_deficit: usize,
    pub n_churn: usize,
    pub n_prune: usize,
    pub n_grow: usize,
    pub weights: ScoreWeights,
}

/// Counts computed for one prune-and-heal step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepPlan {
    pub n_deficit: usize,
    pub n_churn: usize,
    pub n_prune: usize,
    pub n_grow: usize,
}

/// Prune/grow counts for `mask` at round `t`.
///
/// With R remaining steps, `ΔS = (S_target − S)/R`, `N_deficit =
/// round(ΔS·N_total)`, `N_churn = floor(ρ·N_active)`, `N_prune = N_deficit +
/// N_grow`, `N_grow = N_churn`. On the last step (R = 1) the deficit is the
/// exact gap to `round(S_target·N_total)` zeros. Regrowth draws only from
/// positions pruned before this step, so `N_grow` is capped by their count.
/// At least one weight always stays active: the zero count never exceeds
/// `N_total − 1`, and churn shrinks when the deficit needs every active
/// weight.
pub fn plan_step(mask: &Mask, schedule: &PruneSchedule, t: usize) -> StepPlan {
    let n_total = mask.len();
    let zeros = mask.pruned_count();
    let active = mask.active_count();
    let mut target_zeros = (schedule.target_sparsity * n_total as f64).round() as usize;
    if target_zeros >= n_total {
        log::warn!(
            "target sparsity {} would prune all {n_total} weights; keeping one",
            schedule.target_sparsity
        );
        target_zeros = n_total.saturating_sub(1);
    }
    let gap = target_zeros.saturating_sub(zeros);
    let remaining = schedule.remaining_steps(t);
    let n_deficit = if remaining <= 1 {
        gap
    } else {
        let delta = (schedule.target_sparsity - mask.sparsity()) / remaining as f64;
        ((delta * n_total as f64).round().max(0.0) as usize).min(gap)
    };
    let n_churn = (schedule.churn * active as f64 + 1e-9).floor() as usize;
    let n_grow = n_churn.min(zeros).min(active - n_deficit);
    StepPlan {
        n_deficit,
        n_churn,
        n_prune: n_deficit + n_grow,
        n_grow,
    }
}

/// Active positions with the lowest scores (ties by index).
fn lowest_active(mask: &Mask, scores: &[f64], count: usize) -> Vec<usize> {
    let mut active: Vec<usize> = (0..mask.len()).filter(|&i| mask.is_active(i)).collect();
    active.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    active.truncate(count);
    active
}

/// Inactive positions with the largest signal (ties by index).
fn highest_inactive(mask: &Mask, signal: &[f64], count: usize) -> Vec<usize> {
    let mut inactive: Vec<usize> = (0..mask.len()).filter(|&i| !mask.is_active(i)).collect();
    inactive.sort_by(|&a, &b| signal[b].total_cmp(&signal[a]).then(a.cmp(&b)));
    inactive.truncate(count);
    inactive
}

/// One prune-and-heal mask update at round `t` (which must be a scheduled
/// round): prune the lowest-scoring active weights, then reactivate the
/// previously pruned weights with the largest regrowth signal.
pub fn prune_heal_step(
    mask: &Mask,
    scores: &[f64],
    regrowth: &[f64],
    schedule: &PruneSchedule,
    t: usize,
) -> Result<(Mask, StepPlan)> {
    schedule.validate()?;
    if !schedule.is_update_round(t) {
        return Err(Error::config(format!(
            "round {t} is not a scheduled pruning round (f = {}, T = {})",
            schedule.frequency, schedule.rounds
        )));
    }
    if scores.len() != mask.len() || regrowth.len() != mask.len() {
        return Err(Error::shape(format!(
            "mask of {} with {} scores and {} regrowth entries",
            mask.len(),
            scores.len(),
            regrowth.len()
        )));
    }
    let plan = plan_step(mask, schedule, t);
    let regrow = highest_inactive(mask, regrowth, plan.n_grow);
    let prune = lowest_active(mask, scores, plan.n_prune);
    let mut next = mask.clone();
    for i in prune {
        next.set(i, false);
    }
    for i in regrow {
        next.set(i, true);
    }
    Ok((next, plan))
}

/// Mask with the `round(s_start·N)` lowest-scoring positions pruned.
pub fn mask_from_scores(scores: &[f64], sparsity: f64) -> Result<Mask> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::config(format!("sparsity {sparsity} outside [0, 1)")));
    }
    let full = Mask::ones(scores.len());
    let n = (sparsity * scores.len() as f64).round() as usize;
    let mut mask = full.clone();
    for i in lowest_active(&full, scores, n) {
        mask.set(i, false);
    }
    Ok(mask)
}

/// The mask update performed at scheduled round `t`. At the first scheduled
/// round the `start_sparsity` mask (from the same scores) is intersected with
/// `mask` before the prune-and-heal step.
pub fn scheduled_step(
    mask: &Mask,
    scores: &[f64],
    regrowth: &[f64],
    schedule: &PruneSchedule,
    t: usize,
) -> Result<(Mask, StepPlan)> {
    if schedule.first_update_round() != Some(t) {
        return prune_heal_step(mask, scores, regrowth, schedule, t);
    }
    if scores.len() != mask.len() {
        return Err(Error::shape(format!(
            "mask of {} with {} scores",
            mask.len(),
            scores.len()
        )));
    }
    let start = mask_from_scores(scores, schedule.start_sparsity)?;
    let seeded = Mask::from_bits(
        mask.bits()
            .iter()
            .zip(start.bits())
            .map(|(a, b)| *a && *b)
            .collect(),
    );
    prune_heal_step(&seeded, scores, regrowth, schedule, t)
}

/// One-shot start-sparsity mask from importance scores.
pub fn apply_start_sparsity(
    prunable: &[f64],
    signals: &ClusterSignals,
    weights: &ScoreWeights,
    s_start: f64,
) -> Result<Mask> {
    mask_from_scores(&importance(prunable, signals, weights)?, s_start)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_with_zeros(n: usize, zeros: usize) -> Mask {
        Mask::from_bits((0..n).map(|i| i >= zeros).collect())
    }

    #[test]
    fn first_scheduled_round_seeds_start_sparsity() {
        let schedule = PruneSchedule {
            start_sparsity: 0.3,
            target_sparsity: 0.5,
            frequency: 2,
            churn: 0.0,
            rounds: 6,
        };
        let scores: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let (mask, plan) =
            scheduled_step(&Mask::ones(100), &scores, &scores, &schedule, 2).unwrap();
        // 30 zeros from the start mask, then 20 / 2 remaining steps
        assert_eq!(plan.n_deficit, 10);
        assert_eq!(mask.pruned_count(), 40);
        assert!((0..40).all(|i| !mask.is_active(i)));
        let (later, _) = scheduled_step(&mask, &scores, &scores, &schedule, 4).unwrap();
        assert_eq!(later.pruned_count(), 50);
    }

    #[test]
    fn worked_example() {
        // N_total=100, S=0.3 -> 0.7, four steps left, churn 5%
        let schedule = PruneSchedule {
            start_sparsity: 0.3,
            target_sparsity: 0.7,
            frequency: 1,
            churn: 0.05,
            rounds: 8,
        };
        let mask = mask_with_zeros(100, 30);
        assert_eq!(schedule.remaining_steps(4), 4);
        let plan = plan_step(&mask, &schedule, 4);
        assert_eq!(
            plan,
            StepPlan {
                n_deficit: 10,
                n_churn: 3,
                n_prune: 13,
                n_grow: 3
            }
        );
        let scores: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let (next, _) = prune_heal_step(&mask, &scores, &scores, &schedule, 4).unwrap();
        assert!((next.sparsity() - 0.40).abs() < 1e-12);
    }

    #[test]
    fn no_churn_at_target_is_identity() {
        let schedule = PruneSchedule {
            start_sparsity: 0.5,
            target_sparsity: 0.5,
            frequency: 2,
            churn: 0.0,
            rounds: 10,
        };
        let mask = mask_with_zeros(40, 20);
        let scores = vec![0.3; 40];
        let (next, _) = prune_heal_step(&mask, &scores, &scores, &schedule, 4).unwrap();
        assert_eq!(next, mask);
    }

    #[test]
    fn churn_at_target_swaps_positions() {
        let schedule = PruneSchedule {
            start_sparsity: 0.5,
            target_sparsity: 0.5,
            frequency: 1,
            churn: 0.1,
            rounds: 3,
        };
        let mask = mask_with_zeros(40, 20);
        let scores: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let (next, plan) = prune_heal_step(&mask, &scores, &scores, &schedule, 1).unwrap();
        assert_eq!(plan.n_prune, 2);
        assert_eq!(next.sparsity(), 0.5);
        assert_eq!(next.hamming(&mask), 4);
        // lowest active scores (20, 21) pruned; highest-signal inactive (19, 18) regrown
        assert!(!next.is_active(20) && !next.is_active(21));
        assert!(next.is_active(19) && next.is_active(18));
    }

    #[test]
    fn final_step_lands_exactly() {
        let schedule = PruneSchedule {
            start_sparsity: 0.0,
            target_sparsity: 0.7,
            frequency: 3,
            churn: 0.05,
            rounds: 10,
        };
        let mut mask = Mask::ones(97);
        let scores: Vec<f64> = (0..97).map(|i| ((i * 31) % 97) as f64).collect();
        for t in (1..=10).filter(|&t| schedule.is_update_round(t)) {
            mask = prune_heal_step(&mask, &scores, &scores, &schedule, t)
                .unwrap()
                .0;
        }
        assert_eq!(mask.pruned_count(), 68);
    }

    #[test]
    fn off_schedule_round_rejected() {
        let schedule = PruneSchedule::default();
        let mask = Mask::ones(10);
        let s = vec![0.0; 10];
        assert!(prune_heal_step(&mask, &s, &s, &schedule, 3).is_err());
        assert!(prune_heal_step(&mask, &s, &s, &schedule, 55).is_err());
    }

    #[test]
    fn degenerate_schedule_keeps_one_weight() {
        let schedule = PruneSchedule {
            start_sparsity: 0.0,
            target_sparsity: 0.99,
            frequency: 1,
            churn: 0.9,
            rounds: 1,
        };
        let mask = mask_with_zeros(10, 5);
        let s: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let (next, plan) = prune_heal_step(&mask, &s, &s, &schedule, 1).unwrap();
        assert_eq!(next.active_count(), 1);
        assert_eq!(plan.n_deficit, 4);
        assert_eq!(plan.n_grow, 1);
    }

    #[test]
    fn start_sparsity_masks() {
        let scores: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        assert_eq!(mask_from_scores(&scores, 0.0).unwrap(), Mask::ones(10));
        let m = mask_from_scores(&scores, 0.3).unwrap();
        assert_eq!(
            (0..10).filter(|&i| !m.is_active(i)).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
        assert_eq!(mask_from_scores(&[0.5; 10], 0.5).unwrap().pruned_count(), 5);
    }

    #[test]
    fn schedule_validation() {
        let bad = PruneSchedule {
            start_sparsity: 0.8,
            target_sparsity: 0.7,
            ..PruneSchedule::default()
        };
        assert!(bad.validate().is_err());
        let bad = PruneSchedule {
            frequency: 0,
            ..PruneSchedule::default()
        };
        assert!(bad.validate().is_err());
        let bad = PruneSchedule {
            churn: 1.0,
            ..PruneSchedule::default()
        };
        assert!(bad.validate().is_err());
    }
}
