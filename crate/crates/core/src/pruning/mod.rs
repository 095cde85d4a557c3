//! Masks, importance scores and the prune-and-heal schedule.

mod mask;
mod schedule;
mod score;

pub use mask::Mask;
pub use schedule::{
    apply_start_sparsity, mask_from_scores, plan_step, prune_heal_step, scheduled_step,
    PruneSchedule, PruneStepLog, StepPlan,
};
pub use score::{
    coherence_score, consistency_score, importance, magnitude_score, regrowth_signal,
    ClusterSignals, ScoreWeights,
};
