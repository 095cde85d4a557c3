//! Minimal deterministic 1D-CNN engine: forward pass, reverse-mode gradients
//! for the fixed layer set, and a mask-aware Adam optimizer.

mod adam;
mod arch;
mod model;
mod train;

pub use adam::{adam_step, OptimizerState, BETA1, BETA2, EPSILON};
pub use arch::{ArchitectureSpec, ConvBlock, DenseBlock, GradientSet, LayerSlot, Layout, ParamSet};
pub use model::{argmax, Batch, Mode, Network, Proximal};
pub use train::{accumulated_gradient, local_train, TrainConfig, TrainOutcome};

#[cfg(test)]
mod tests;
