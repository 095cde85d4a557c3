use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

/// One convolution block: valid 1D convolution, ReLU, max pooling, dropout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel: usize,
    /// Non-overlapping max-pool window; 1 disables pooling.
    pub pool: usize,
    pub dropout: f64,
}

/// Hidden fully connected layer followed by ReLU and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenseBlock {
    pub units: usize,
    pub dropout: f64,
}

/// Shape of the 1D CNN used by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub timesteps: usize,
    pub channels: usize,
    pub conv: Vec<ConvBlock>,
    pub dense: Vec<DenseBlock>,
    pub num_classes: usize,
}

impl ArchitectureSpec {
    /// Two conv blocks (64 filters, kernel 5, pool 2, dropout 0.3), a 32-unit
    /// dense layer with dropout 0.2, and a softmax head.
    pub fn har(timesteps: usize, channels: usize, num_classes: usize) -> Self {
        Self::scaled_har(timesteps, channels, num_classes, 64, 32)
    }

    /// Same topology as [`ArchitectureSpec::har`] with configurable widths.
    pub fn scaled_har(
        timesteps: usize,
        channels: usize,
        num_classes: usize,
        filters: usize,
        dense_units: usize,
    ) -> Self {
        let block = ConvBlock {
            filters,
            kernel: 5,
            pool: 2,
            dropout: 0.3,
        };
        Self {
            timesteps,
            channels,
            conv: vec![block, block],
            dense: vec![DenseBlock {
                units: dense_units,
                dropout: 0.2,
            }],
            num_classes,
        }
    }

    pub fn wisdm() -> Self {
        Self::har(200, 3, 6)
    }

    pub fn ucihar() -> Self {
        Self::har(128, 9, 6)
    }

    /// Values per input sample.
    pub fn sample_len(&self) -> usize {
        self.timesteps * self.channels
    }

    /// Sequence length and channel count after each conv block.
    pub fn conv_output_shapes(&self) -> Result<Vec<(usize, usize)>> {
        let mut len = self.timesteps;
        let mut shapes = Vec::with_capacity(self.conv.len());
        for (i, block) in self.conv.iter().enumerate() {
            if block.kernel == 0 || block.filters == 0 || block.pool == 0 {
                return Err(Error::config(format!(
                    "conv block {i}: kernel, filters and pool must be positive"
                )));
            }
            if len < block.kernel {
                return Err(Error::config(format!(
                    "conv block {i}: input length {len} shorter than kernel {}",
                    block.kernel
                )));
            }
            let conv_len = len - block.kernel + 1;
            len = conv_len / block.pool;
            if len == 0 {
                return Err(Error::config(format!(
                    "conv block {i}: pooling collapses the sequence"
                )));
            }
            shapes.push((len, block.filters));
        }
        Ok(shapes)
    }

    pub fn flatten_size(&self) -> Result<usize> {
        Ok(match self.conv_output_shapes()?.last() {
            Some(&(len, ch)) => len * ch,
            None => self.sample_len(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 || self.channels == 0 {
            return Err(Error::config("input shape must be positive"));
        }
        if self.num_classes < 1 {
            return Err(Error::config("num_classes must be at least 1"));
        }
        let rates = self
            .conv
            .iter()
            .map(|c| c.dropout)
            .chain(self.dense.iter().map(|d| d.dropout));
        for rate in rates {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::config(format!("dropout rate {rate} outside [0,1)")));
            }
        }
        if self.dense.iter().any(|d| d.units == 0) {
            return Err(Error::config("dense layers need at least one unit"));
        }
        self.flatten_size().map(|_| ())
    }

    /// Parameter layout: per layer a kernel (prunable) followed by its bias.
    ///
    /// Conv kernels are stored `[kernel, in_channels, filters]`, dense kernels
    /// `[inputs, units]`.
    pub fn layout(&self) -> Result<Layout> {
        self.validate()?;
        let mut slots = Vec::new();
        let mut in_ch = self.channels;
        for (i, block) in self.conv.iter().enumerate() {
            slots.push((
                format!("conv{}.kernel", i + 1),
                vec![block.kernel, in_ch, block.filters],
                true,
            ));
            slots.push((format!("conv{}.bias", i + 1), vec![block.filters], false));
            in_ch = block.filters;
        }
        let mut width = self.flatten_size()?;
        for (i, block) in self.dense.iter().enumerate() {
            slots.push((
                format!("dense{}.kernel", i + 1),
                vec![width, block.units],
                true,
            ));
            slots.push((format!("dense{}.bias", i + 1), vec![block.units], false));
            width = block.units;
        }
        slots.push(("output.kernel".into(), vec![width, self.num_classes], true));
        slots.push(("output.bias".into(), vec![self.num_classes], false));
        Ok(Layout::from_slots(slots))
    }
}

/// Placement of one parameter tensor inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    pub prunable: bool,
}

impl LayerSlot {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    slots: Vec<LayerSlot>,
    total: usize,
    prunable: usize,
}

impl Layout {
    pub(crate) fn from_slots(slots: Vec<(String, Vec<usize>, bool)>) -> Self {
        let mut offset = 0;
        let mut prunable = 0;
        let slots = slots
            .into_iter()
            .map(|(name, shape, is_prunable)| {
                let len = shape.iter().product();
                let slot = LayerSlot {
                    name,
                    shape,
                    offset,
                    len,
                    prunable: is_prunable,
                };
                offset += len;
                if is_prunable {
                    prunable += len;
                }
                slot
            })
            .collect();
        Self {
            slots,
            total: offset,
            prunable,
        }
    }

    pub fn slots(&self) -> &[LayerSlot] {
        &self.slots
    }

    pub fn slot(&self, name: &str) -> Option<&LayerSlot> {
        self.slots.iter().find(|s| s.name == name)
    }

    /// Total number of parameters, |W|.
    pub fn total(&self) -> usize {
        self.total
    }

    /// Number of prunable positions (all kernel entries).
    pub fn prunable_len(&self) -> usize {
        self.prunable
    }

    pub fn prunable_slots(&self) -> impl Iterator<Item = &LayerSlot> {
        self.slots.iter().filter(|s| s.prunable)
    }

    /// Flat parameter index of every prunable position, in mask order.
    pub fn prunable_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.prunable_slots().flat_map(|s| s.range())
    }
}

/// Flat, ordered parameter vector tied to a [`Layout`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl ParamSet {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![0.0; layout.total()];
        Self { layout, values }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::shape(format!(
                "{} values for a layout of {}",
                values.len(),
                layout.total()
            )));
        }
        Ok(Self { layout, values })
    }

    /// He-uniform kernels (limit `sqrt(6 / fan_in)`), zero biases.
    pub fn he_uniform(layout: Arc<Layout>, seed: u64) -> Self {
        let mut rng = rng_for(seed, &[stream::INIT]);
        let mut values = vec![0.0; layout.total()];
        for slot in layout.prunable_slots() {
            // fan-in is everything but the output axis
            let fan_in: usize = slot.shape[..slot.shape.len() - 1].iter().product();
            let limit = (6.0 / fan_in as f64).sqrt();
            for v in &mut values[slot.range()] {
                *v = rng.random_range(-limit..limit);
            }
        }
        Self { layout, values }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn ensure_same_layout(&self, other: &ParamSet) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::shape("parameter sets have different layouts"))
        }
    }

    /// `self - other`, elementwise.
    pub fn delta_from(&self, other: &ParamSet) -> Result<Vec<f64>> {
        self.ensure_same_layout(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect())
    }

    pub fn squared_distance(&self, other: &ParamSet) -> Result<f64> {
        self.ensure_same_layout(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    /// Values at prunable positions, in mask order.
    pub fn prunable_values(&self) -> Vec<f64> {
        self.layout
            .prunable_indices()
            .map(|i| self.values[i])
            .collect()
    }

    /// Little-endian f32 dump for debugging.
    pub fn to_le_f32_bytes(&self) -> Vec<u8> {
        self.values
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect()
    }
}

/// Gradient of a scalar objective with respect to a [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSet {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl GradientSet {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![0.0; layout.total()];
        Self { layout, values }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::shape(format!(
                "{} gradient entries for a layout of {}",
                values.len(),
                layout.total()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Adds `other` into `self`.
    pub fn accumulate(&mut self, other: &GradientSet) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn prunable_values(&self) -> Vec<f64> {
        self.layout
            .prunable_indices()
            .map(|i| self.values[i])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn har_layouts_have_expected_sizes() {
        let wisdm = ArchitectureSpec::wisdm().layout().unwrap();
        // conv1 5*3*64+64, conv2 5*64*64+64, dense 47*64*32+32, out 32*6+6
        assert_eq!(wisdm.total(), 1024 + 20544 + 96288 + 198);
        let uci = ArchitectureSpec::ucihar().layout().unwrap();
        assert_eq!(uci.total(), 2944 + 20544 + 59424 + 198);
        assert_eq!(uci.prunable_len(), uci.total() - (64 + 64 + 32 + 6));
    }

    #[test]
    fn flatten_positive_for_both_datasets() {
        assert_eq!(ArchitectureSpec::wisdm().flatten_size().unwrap(), 47 * 64);
        assert_eq!(ArchitectureSpec::ucihar().flatten_size().unwrap(), 29 * 64);
    }

    #[test]
    fn offsets_are_contiguous() {
        let layout = ArchitectureSpec::ucihar().layout().unwrap();
        let mut expected = 0;
        for slot in layout.slots() {
            assert_eq!(slot.offset, expected);
            expected += slot.len;
        }
        assert_eq!(expected, layout.total());
        assert_eq!(layout, ArchitectureSpec::ucihar().layout().unwrap());
    }

    #[test]
    fn too_short_input_is_rejected() {
        let spec = ArchitectureSpec::har(8, 3, 6);
        assert!(matches!(spec.layout(), Err(Error::Config(_))));
    }

    #[test]
    fn he_uniform_is_seeded_and_bounded() {
        let layout = Arc::new(ArchitectureSpec::har(32, 3, 4).layout().unwrap());
        let a = ParamSet::he_uniform(layout.clone(), 3);
        let b = ParamSet::he_uniform(layout.clone(), 3);
        assert_eq!(a, b);
        let slot = layout.slot("conv1.kernel").unwrap();
        let limit = (6.0f64 / 15.0).sqrt();
        assert!(a.values()[slot.range()].iter().all(|v| v.abs() <= limit));
        let bias = layout.slot("conv1.bias").unwrap();
        assert!(a.values()[bias.range()].iter().all(|&v| v == 0.0));
    }
}
