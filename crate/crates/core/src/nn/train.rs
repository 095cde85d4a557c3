use rand::seq::SliceRandom;

use super::adam::OptimizerState;
use super::arch::{GradientSet, ParamSet};
use super::model::{Batch, Mode, Network, Proximal};
use crate::data::Samples;
use crate::error::{Error, Result};
use crate::pruning::Mask;
use crate::rng::{derive_seed, rng_for};

/// Local optimization settings for one client visit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Dropout on during training passes.
    pub dropout: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamSet,
    /// Mean training objective over the last epoch's batches (NaN if no epochs ran).
    pub last_loss: f64,
}

/// Runs `cfg.epochs` epochs of minibatch Adam from `start`.
///
/// Each epoch reshuffles with a stream derived from `seed` and the epoch
/// index. Under a mask the start point is projected onto it and every step
/// keeps pruned positions at zero.
#[allow(clippy::too_many_arguments)]
pub fn local_train(
    net: &Network,
    start: &ParamSet,
    samples: &Samples,
    cfg: &TrainConfig,
    opt: &mut OptimizerState,
    proximal: Option<Proximal>,
    mask: Option<&Mask>,
    seed: u64,
) -> Result<TrainOutcome> {
    if cfg.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    if samples.is_empty() {
        return Err(Error::data("cannot train on an empty sample set"));
    }
    let mut params = start.clone();
    if let Some(m) = mask {
        m.apply(&mut params)?;
    }
    let sample_len = net.spec().sample_len();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut inputs = Vec::with_capacity(cfg.batch_size * sample_len);
    let mut labels = Vec::with_capacity(cfg.batch_size);
    let mut last_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_for(seed, &[epoch as u64]));
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            samples.gather(chunk, &mut inputs, &mut labels);
            let batch = Batch::new(&inputs, sample_len)?;
            let mode = if cfg.dropout {
                Mode::Train {
                    seed: derive_seed(seed, &[epoch as u64, b as u64, 0xD0]),
                }
            } else {
                Mode::Eval
            };
            let (loss, grads) =
                net.loss_and_grad(&params, &batch, &labels, proximal, None, mode)?;
            opt.step(&mut params, &grads, mask)?;
            loss_sum += loss;
            batches += 1;
        }
        last_loss = loss_sum / batches as f64;
    }
    Ok(TrainOutcome { params, last_loss })
}

/// Sum over one in-order pass of the batch-mean gradients at `params ⊙ mask`,
/// dropout off. Used as the per-client gradient signal for pruning.
pub fn accumulated_gradient(
    net: &Network,
    params: &ParamSet,
    samples: &Samples,
    batch_size: usize,
    proximal: Option<Proximal>,
    mask: Option<&Mask>,
) -> Result<GradientSet> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let sample_len = net.spec().sample_len();
    let order: Vec<usize> = (0..samples.len()).collect();
    let mut total = GradientSet::zeros(net.layout().clone());
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for chunk in order.chunks(batch_size) {
        samples.gather(chunk, &mut inputs, &mut labels);
        let batch = Batch::new(&inputs, sample_len)?;
        let (_, g) = net.loss_and_grad(params, &batch, &labels, proximal, mask, Mode::Eval)?;
        total.accumulate(&g);
    }
    Ok(total)
}
