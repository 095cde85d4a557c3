use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::{ArchitectureSpec, GradientSet, Layout, ParamSet};
use crate::data::{ClientDataset, Samples};
use crate::error::{Error, Result};
use crate::pruning::Mask;

/// Whether dropout is active for a pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Inverted dropout driven by `seed`.
    Train {
        seed: u64,
    },
}

/// A contiguous batch of samples, each `timesteps * channels` values in
/// time-major order.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    inputs: &'a [f64],
    len: usize,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: &'a [f64], sample_len: usize) -> Result<Self> {
        if sample_len == 0 || !inputs.len().is_multiple_of(sample_len) {
            return Err(Error::shape(format!(
                "{} input values are not a whole number of {sample_len}-value samples",
                inputs.len()
            )));
        }
        Ok(Self {
            inputs,
            len: inputs.len() / sample_len,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn sample(&self, i: usize, sample_len: usize) -> &'a [f64] {
        &self.inputs[i * sample_len..(i + 1) * sample_len]
    }
}

/// Proximal term `(λ/2)·‖w − reference‖²`.
#[derive(Debug, Clone, Copy)]
pub struct Proximal<'a> {
    pub reference: &'a ParamSet,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy)]
struct ConvDims {
    in_len: usize,
    in_ch: usize,
    kernel: usize,
    filters: usize,
    conv_len: usize,
    pool: usize,
    out_len: usize,
    dropout: f64,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct DenseDims {
    inputs: usize,
    units: usize,
    dropout: f64,
    relu: bool,
    w: usize,
    b: usize,
}

#[derive(Debug, Default)]
struct ConvCache {
    relu: Vec<f64>,
    argmax: Vec<usize>,
    scale: Vec<f64>,
    out: Vec<f64>,
}

#[derive(Debug, Default)]
struct DenseCache {
    out: Vec<f64>,
    scale: Vec<f64>,
}

#[derive(Debug, Default)]
struct Workspace {
    conv: Vec<ConvCache>,
    dense: Vec<DenseCache>,
    logits: Vec<f64>,
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
}

/// The fixed-topology 1D CNN: conv blocks, hidden dense layers, softmax head.
#[derive(Debug, Clone)]
pub struct Network {
    spec: ArchitectureSpec,
    layout: Arc<Layout>,
    convs: Vec<ConvDims>,
    dense: Vec<DenseDims>,
}

impl Network {
    pub fn new(spec: &ArchitectureSpec) -> Result<Self> {
        let layout = Arc::new(spec.layout()?);
        let mut convs = Vec::new();
        let mut len = spec.timesteps;
        let mut ch = spec.channels;
        for (i, block) in spec.conv.iter().enumerate() {
            let conv_len = len - block.kernel + 1;
            let out_len = conv_len / block.pool;
            let w = layout
                .slot(&format!("conv{}.kernel", i + 1))
                .unwrap()
                .offset;
            let b = layout.slot(&format!("conv{}.bias", i + 1)).unwrap().offset;
            convs.push(ConvDims {
                in_len: len,
                in_ch: ch,
                kernel: block.kernel,
                filters: block.filters,
                conv_len,
                pool: block.pool,
                out_len,
                dropout: block.dropout,
                w,
                b,
            });
            len = out_len;
            ch = block.filters;
        }
        let mut width = len * ch;
        let mut dense = Vec::new();
        for (i, block) in spec.dense.iter().enumerate() {
            dense.push(DenseDims {
                inputs: width,
                units: block.units,
                dropout: block.dropout,
                relu: true,
                w: layout
                    .slot(&format!("dense{}.kernel", i + 1))
                    .unwrap()
                    .offset,
                b: layout.slot(&format!("dense{}.bias", i + 1)).unwrap().offset,
            });
            width = block.units;
        }
        dense.push(DenseDims {
            inputs: width,
            units: spec.num_classes,
            dropout: 0.0,
            relu: false,
            w: layout.slot("output.kernel").unwrap().offset,
            b: layout.slot("output.bias").unwrap().offset,
        });
        Ok(Self {
            spec: spec.clone(),
            layout,
            convs,
            dense,
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn init_params(&self, seed: u64) -> ParamSet {
        ParamSet::he_uniform(self.layout.clone(), seed)
    }

    pub fn zero_params(&self) -> ParamSet {
        ParamSet::zeros(self.layout.clone())
    }

    fn check_params(&self, params: &ParamSet) -> Result<()> {
        if **params.layout() != *self.layout {
            return Err(Error::shape("parameter layout does not match the network"));
        }
        Ok(())
    }

    /// Softmax class probabilities, one row of `num_classes` per sample.
    pub fn forward(&self, params: &ParamSet, batch: &Batch, mode: Mode) -> Result<Vec<f64>> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        let c = self.num_classes();
        let mut ws = self.workspace();
        let mut rng = dropout_rng(mode);
        let mut probs = Vec::with_capacity(batch.len() * c);
        for i in 0..batch.len() {
            self.forward_sample(
                params.values(),
                batch.sample(i, self.spec.sample_len()),
                rng.as_mut(),
                &mut ws,
            );
            let lse = log_sum_exp(&ws.logits);
            probs.extend(ws.logits.iter().map(|z| (z - lse).exp()));
        }
        Ok(probs)
    }

    /// Argmax class per sample; ties resolve to the lowest class index.
    pub fn predict(&self, params: &ParamSet, batch: &Batch) -> Result<Vec<usize>> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        let mut ws = self.workspace();
        Ok((0..batch.len())
            .map(|i| {
                self.forward_sample(
                    params.values(),
                    batch.sample(i, self.spec.sample_len()),
                    None,
                    &mut ws,
                );
                argmax(&ws.logits)
            })
            .collect())
    }

    /// Mean cross-entropy over the batch, plus the proximal term when given,
    /// and the gradient of that objective.
    ///
    /// With a mask the forward pass runs on `w ⊙ M`; the gradient is still
    /// reported at pruned positions (it is the signal regrowth ranks by).
    pub fn loss_and_grad(
        &self,
        params: &ParamSet,
        batch: &Batch,
        labels: &[usize],
        proximal: Option<Proximal>,
        mask: Option<&Mask>,
        mode: Mode,
    ) -> Result<(f64, GradientSet)> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        if labels.len() != batch.len() {
            return Err(Error::shape(format!(
                "{} labels for {} samples",
                labels.len(),
                batch.len()
            )));
        }
        if batch.is_empty() {
            return Err(Error::data("empty batch"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.num_classes()) {
            return Err(Error::data(format!("label {bad} out of range")));
        }
        if let Some(p) = &proximal {
            if p.lambda.is_nan() || p.lambda < 0.0 {
                return Err(Error::config(format!("negative lambda {}", p.lambda)));
            }
            self.check_params(p.reference)?;
        }

        let masked;
        let effective = match mask {
            Some(m) => {
                let mut copy = params.clone();
                m.apply(&mut copy)?;
                masked = copy;
                &masked
            }
            None => params,
        };

        let mut ws = self.workspace();
        let mut rng = dropout_rng(mode);
        let mut grad = vec![0.0; self.layout.total()];
        let mut loss = 0.0;
        let inv_n = 1.0 / batch.len() as f64;
        for (i, &label) in labels.iter().enumerate() {
            let x = batch.sample(i, self.spec.sample_len());
            self.forward_sample(effective.values(), x, rng.as_mut(), &mut ws);
            let lse = log_sum_exp(&ws.logits);
            loss += lse - ws.logits[label];
            let mut d: Vec<f64> = ws.logits.iter().map(|z| (z - lse).exp() * inv_n).collect();
            d[label] -= inv_n;
            self.backward_sample(effective.values(), x, &d, &mut ws, &mut grad);
        }
        loss *= inv_n;

        if let Some(p) = proximal {
            let mut sq = 0.0;
            for ((g, w), r) in grad
                .iter_mut()
                .zip(params.values())
                .zip(p.reference.values())
            {
                let diff = w - r;
                sq += diff * diff;
                *g += p.lambda * diff;
            }
            loss += 0.5 * p.lambda * sq;
        }
        Ok((loss, GradientSet::from_values(self.layout.clone(), grad)?))
    }

    /// Fraction of argmax-correct predictions on the test split.
    pub fn evaluate(&self, params: &ParamSet, dataset: &ClientDataset) -> Result<f64> {
        self.accuracy(params, &dataset.test).map_err(|e| match e {
            Error::Data(_) => Error::data(format!("client {}: empty test split", dataset.id)),
            other => other,
        })
    }

    pub fn accuracy(&self, params: &ParamSet, samples: &Samples) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::data("empty sample set"));
        }
        let batch = Batch::new(samples.inputs(), self.spec.sample_len())?;
        let predicted = self.predict(params, &batch)?;
        let correct = predicted
            .iter()
            .zip(samples.labels())
            .filter(|(p, y)| p == y)
            .count();
        Ok(correct as f64 / samples.len() as f64)
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let sample_len = self.spec.sample_len();
        if batch.inputs.len() != batch.len * sample_len {
            return Err(Error::shape(format!(
                "batch of {} values does not match input shape ({}, {})",
                batch.inputs.len(),
                self.spec.timesteps,
                self.spec.channels
            )));
        }
        Ok(())
    }

    fn workspace(&self) -> Workspace {
        Workspace {
            conv: self.convs.iter().map(|_| ConvCache::default()).collect(),
            dense: self.dense.iter().map(|_| DenseCache::default()).collect(),
            ..Default::default()
        }
    }

    fn forward_sample(
        &self,
        w: &[f64],
        x: &[f64],
        mut rng: Option<&mut ChaCha8Rng>,
        ws: &mut Workspace,
    ) {
        for (li, d) in self.convs.iter().enumerate() {
            let (before, rest) = ws.conv.split_at_mut(li);
            let input: &[f64] = if li == 0 { x } else { &before[li - 1].out };
            let cache = &mut rest[0];
            let f = d.filters;
            cache.relu.clear();
            cache.relu.resize(d.conv_len * f, 0.0);
            let kernel = &w[d.w..d.w + d.kernel * d.in_ch * f];
            let bias = &w[d.b..d.b + f];
            for t in 0..d.conv_len {
                let row = &mut cache.relu[t * f..(t + 1) * f];
                row.copy_from_slice(bias);
                for k in 0..d.kernel {
                    let xin = &input[(t + k) * d.in_ch..(t + k + 1) * d.in_ch];
                    for (c, &xv) in xin.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let wrow = &kernel[(k * d.in_ch + c) * f..(k * d.in_ch + c + 1) * f];
                        for (o, wv) in row.iter_mut().zip(wrow) {
                            *o += xv * wv;
                        }
                    }
                }
                for o in row.iter_mut() {
                    if *o < 0.0 {
                        *o = 0.0;
                    }
                }
            }
            cache.argmax.clear();
            cache.argmax.resize(d.out_len * f, 0);
            cache.out.clear();
            cache.out.resize(d.out_len * f, 0.0);
            for t in 0..d.out_len {
                for ch in 0..f {
                    let mut best = t * d.pool;
                    let mut best_v = cache.relu[best * f + ch];
                    for s in 1..d.pool {
                        let v = cache.relu[(t * d.pool + s) * f + ch];
                        if v > best_v {
                            best_v = v;
                            best = t * d.pool + s;
                        }
                    }
                    cache.argmax[t * f + ch] = best;
                    cache.out[t * f + ch] = best_v;
                }
            }
            fill_dropout(
                &mut cache.scale,
                cache.out.len(),
                d.dropout,
                rng.as_deref_mut(),
            );
            for (o, s) in cache.out.iter_mut().zip(&cache.scale) {
                *o *= s;
            }
        }

        for (li, d) in self.dense.iter().enumerate() {
            let input: &[f64] = if li == 0 {
                match ws.conv.last() {
                    Some(c) => &c.out,
                    None => x,
                }
            } else {
                &ws.dense[li - 1].out
            };
            let mut out = w[d.b..d.b + d.units].to_vec();
            let kernel = &w[d.w..d.w + d.inputs * d.units];
            for (i, &xv) in input.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (o, wv) in out.iter_mut().zip(&kernel[i * d.units..(i + 1) * d.units]) {
                    *o += xv * wv;
                }
            }
            let cache = &mut ws.dense[li];
            if d.relu {
                for o in out.iter_mut() {
                    if *o < 0.0 {
                        *o = 0.0;
                    }
                }
            }
            fill_dropout(&mut cache.scale, out.len(), d.dropout, rng.as_deref_mut());
            for (o, s) in out.iter_mut().zip(&cache.scale) {
                *o *= s;
            }
            cache.out = out;
        }
        ws.logits
            .clone_from(&ws.dense.last().expect("output layer").out);
    }

    /// Accumulates d(loss)/d(w) into `grad`, given d(loss)/d(logits).
    fn backward_sample(
        &self,
        w: &[f64],
        x: &[f64],
        dlogits: &[f64],
        ws: &mut Workspace,
        grad: &mut [f64],
    ) {
        let mut upstream = std::mem::take(&mut ws.grad_a);
        let mut down = std::mem::take(&mut ws.grad_b);
        upstream.clear();
        upstream.extend_from_slice(dlogits);

        for li in (0..self.dense.len()).rev() {
            let d = self.dense[li];
            let cache = &ws.dense[li];
            // through dropout scale and relu (relu output > 0 iff active)
            for ((g, s), o) in upstream.iter_mut().zip(&cache.scale).zip(&cache.out) {
                *g *= s;
                if d.relu && *o <= 0.0 {
                    *g = 0.0;
                }
            }
            let input: &[f64] = if li == 0 {
                match ws.conv.last() {
                    Some(c) => &c.out,
                    None => x,
                }
            } else {
                &ws.dense[li - 1].out
            };
            for (gb, g) in grad[d.b..d.b + d.units].iter_mut().zip(&upstream) {
                *gb += g;
            }
            let kernel = &w[d.w..d.w + d.inputs * d.units];
            let gk = &mut grad[d.w..d.w + d.inputs * d.units];
            down.clear();
            down.resize(d.inputs, 0.0);
            for i in 0..d.inputs {
                let xv = input[i];
                let krow = &kernel[i * d.units..(i + 1) * d.units];
                let grow = &mut gk[i * d.units..(i + 1) * d.units];
                let mut acc = 0.0;
                for ((gw, wv), g) in grow.iter_mut().zip(krow).zip(&upstream) {
                    *gw += xv * g;
                    acc += wv * g;
                }
                down[i] = acc;
            }
            std::mem::swap(&mut upstream, &mut down);
        }

        for li in (0..self.convs.len()).rev() {
            let d = self.convs[li];
            let f = d.filters;
            let cache = &ws.conv[li];
            // dropout, then route through the pool argmax, then relu
            let mut dz = vec![0.0; d.conv_len * f];
            for t in 0..d.out_len {
                for ch in 0..f {
                    let idx = t * f + ch;
                    let src = cache.argmax[idx];
                    if cache.relu[src * f + ch] > 0.0 {
                        dz[src * f + ch] += upstream[idx] * cache.scale[idx];
                    }
                }
            }
            let input: &[f64] = if li == 0 { x } else { &ws.conv[li - 1].out };
            let kernel = &w[d.w..d.w + d.kernel * d.in_ch * f];
            {
                let gb = &mut grad[d.b..d.b + f];
                for t in 0..d.conv_len {
                    for (b, g) in gb.iter_mut().zip(&dz[t * f..(t + 1) * f]) {
                        *b += g;
                    }
                }
            }
            let need_input_grad = li > 0;
            down.clear();
            down.resize(
                if need_input_grad {
                    d.in_len * d.in_ch
                } else {
                    0
                },
                0.0,
            );
            let gk = &mut grad[d.w..d.w + d.kernel * d.in_ch * f];
            for t in 0..d.conv_len {
                let dzt = &dz[t * f..(t + 1) * f];
                if dzt.iter().all(|&g| g == 0.0) {
                    continue;
                }
                for k in 0..d.kernel {
                    for c in 0..d.in_ch {
                        let xi = (t + k) * d.in_ch + c;
                        let xv = input[xi];
                        let base = (k * d.in_ch + c) * f;
                        let grow = &mut gk[base..base + f];
                        if xv != 0.0 {
                            for (gw, g) in grow.iter_mut().zip(dzt) {
                                *gw += xv * g;
                            }
                        }
                        if need_input_grad {
                            let krow = &kernel[base..base + f];
                            down[xi] += krow.iter().zip(dzt).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
            }
            std::mem::swap(&mut upstream, &mut down);
        }
        ws.grad_a = upstream;
        ws.grad_b = down;
    }
}

fn dropout_rng(mode: Mode) -> Option<ChaCha8Rng> {
    match mode {
        Mode::Eval => None,
        Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
    }
}

fn fill_dropout(scale: &mut Vec<f64>, n: usize, rate: f64, rng: Option<&mut ChaCha8Rng>) {
    scale.clear();
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            scale.extend((0..n).map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            }));
        }
        _ => scale.resize(n, 1.0),
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
