//! Frozen random weights, masked forward pass and the multiplier backward
//! pass.
//!
//! The forward computes the network output with every weight `w_j` replaced
//! by `multiplier_j * w_j`. The multiplier is the only differentiable input:
//! the backward pass returns the exact gradient of a scalar loss with
//! respect to each multiplier entry, with ReLU and pooling gates frozen at
//! their forward-pass values. Inputs may carry a leading batch dimension, in
//! which case gradients are summed over the batch.

use rand::Rng;

use super::topology::{LayerSpec, NetworkTopology};
use super::Tensor;
use crate::rng::{stream, StreamId};
use crate::{Error, Result};

/// Frozen signed-constant weights, reconstructible from `(seed, topology)`.
///
/// Every weight of a layer equals `+sigma` or `-sigma` for that layer, where
/// `sigma = sqrt(2 / fan_in)` is the Kaiming-normal standard deviation.
/// Weights are never updated.
#[derive(Debug, Clone)]
pub struct FixedWeights {
    topology: NetworkTopology,
    seed: u64,
    values: Vec<f64>,
    sigma_per_layer: Vec<f64>,
}

impl FixedWeights {
    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Flat weight values, concatenated over weighted layers in order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// One sigma per weighted layer, in weighted-layer order.
    pub fn sigma_per_layer(&self) -> &[f64] {
        &self.sigma_per_layer
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }
}

/// Build the frozen network for `(seed, topology)`.
///
/// Each weight is an independent fair coin flip between `-sigma` and
/// `+sigma`, drawn from a stream derived from the seed and the layer's index
/// in the topology, so rebuilding reproduces bit-identical values.
pub fn build_network(seed: u64, topology: &NetworkTopology) -> Result<FixedWeights> {
    let mut values = Vec::with_capacity(topology.param_count());
    let mut sigma_per_layer = Vec::new();
    for (layer_idx, _, count) in topology.weighted_layers() {
        let layer = &topology.layers()[layer_idx];
        let fan_in = layer.fan_in().expect("weighted layer has fan-in") as f64;
        let sigma = (2.0 / fan_in).sqrt();
        sigma_per_layer.push(sigma);
        let mut rng = stream(
            seed,
            StreamId::LayerWeights {
                layer: layer_idx as u64,
            },
        );
        values.extend((0..count).map(|_| {
            if rng.random::<f64>() < 0.5 {
                -sigma
            } else {
                sigma
            }
        }));
    }
    Ok(FixedWeights {
        topology: topology.clone(),
        seed,
        values,
        sigma_per_layer,
    })
}

/// Per-layer state captured during a forward pass.
enum LayerData {
    /// Input activations of a dense or conv layer, `batch * in_size`.
    Weighted {
        input: Vec<f64>,
    },
    /// True where the pre-activation was strictly positive.
    Relu {
        gates: Vec<bool>,
    },
    /// Flat index (into the layer input) of each pooled maximum.
    MaxPool {
        argmax: Vec<u32>,
    },
    Flatten,
}

/// Everything the backward pass needs from one forward call.
///
/// A cache is valid only for the `(weights, multiplier, input)` triple that
/// produced it; the backward functions consume it by value so a cache can
/// never be reused against a later forward.
pub struct ActivationCache {
    topology: NetworkTopology,
    batch: usize,
    layer_data: Vec<LayerData>,
    effective: Vec<f64>,
    raw: Vec<f64>,
    logits_len: usize,
}

/// Masked forward pass over frozen weights.
///
/// `multiplier` has one entry per weight; it may be binary (a sampled mask)
/// or fractional (the probability mask itself, for expected-network mode and
/// gradient checking). `x` is either a single input matching the topology's
/// input shape or a batch with one extra leading dimension.
pub fn forward_masked(
    weights: &FixedWeights,
    multiplier: &[f64],
    x: &Tensor,
) -> Result<(Tensor, ActivationCache)> {
    forward_with_weights(weights.topology(), weights.values(), multiplier, x)
}

/// Forward pass over arbitrary weight values; shared by the frozen-weight
/// path and baselines that train real weights.
pub fn forward_with_weights(
    topology: &NetworkTopology,
    weight_values: &[f64],
    multiplier: &[f64],
    x: &Tensor,
) -> Result<(Tensor, ActivationCache)> {
    let n = topology.param_count();
    if weight_values.len() != n {
        return Err(Error::Shape(format!(
            "weight vector has {} entries, topology has {} parameters",
            weight_values.len(),
            n
        )));
    }
    if multiplier.len() != n {
        return Err(Error::Shape(format!(
            "multiplier has {} entries, topology has {} parameters",
            multiplier.len(),
            n
        )));
    }
    let input_shape = topology.input_shape();
    let (batch, batched) = if x.shape() == input_shape {
        (1, false)
    } else if x.shape().len() == input_shape.len() + 1 && &x.shape()[1..] == input_shape {
        (x.shape()[0], true)
    } else {
        return Err(Error::Shape(format!(
            "input shape {:?} does not match topology input {:?}",
            x.shape(),
            input_shape
        )));
    };
    if batch == 0 {
        return Err(Error::Shape("empty batch".into()));
    }

    let effective: Vec<f64> = weight_values
        .iter()
        .zip(multiplier)
        .map(|(w, m)| w * m)
        .collect();

    let mut layer_data = Vec::with_capacity(topology.layers().len());
    let mut current = x.values().to_vec();
    let mut offset = 0;
    for (i, layer) in topology.layers().iter().enumerate() {
        let in_shape = topology.shape_before(i);
        let out_shape = topology.shape_before(i + 1);
        match *layer {
            LayerSpec::Dense { input, output } => {
                let eff = &effective[offset..offset + input * output];
                offset += input * output;
                let mut out = vec![0.0; batch * output];
                dense_forward(eff, &current, &mut out, batch, input, output);
                layer_data.push(LayerData::Weighted { input: current });
                current = out;
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let count = out_channels * in_channels * kernel * kernel;
                let eff = &effective[offset..offset + count];
                offset += count;
                let (h, w) = (in_shape[1], in_shape[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let mut out = vec![0.0; batch * out_channels * oh * ow];
                conv_forward(
                    eff,
                    &current,
                    &mut out,
                    batch,
                    in_channels,
                    h,
                    w,
                    out_channels,
                    oh,
                    ow,
                    kernel,
                    stride,
                    padding,
                );
                layer_data.push(LayerData::Weighted { input: current });
                current = out;
            }
            LayerSpec::Relu => {
                let gates: Vec<bool> = current.iter().map(|&v| v > 0.0).collect();
                for v in current.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                layer_data.push(LayerData::Relu { gates });
            }
            LayerSpec::MaxPool2d { window } => {
                let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let mut out = vec![0.0; batch * c * oh * ow];
                let mut argmax = vec![0u32; batch * c * oh * ow];
                pool_forward(
                    &current,
                    &mut out,
                    &mut argmax,
                    batch,
                    c,
                    h,
                    w,
                    oh,
                    ow,
                    window,
                );
                layer_data.push(LayerData::MaxPool { argmax });
                current = out;
            }
            LayerSpec::Flatten => {
                layer_data.push(LayerData::Flatten);
            }
        }
    }

    debug_assert!(current.iter().all(|v| v.is_finite()));
    let logits_len = current.len() / batch;
    let out_shape = if batched {
        let mut s = vec![batch];
        s.extend_from_slice(topology.output_shape());
        s
    } else {
        topology.output_shape().to_vec()
    };
    let logits = Tensor::new(out_shape, current)?;
    let cache = ActivationCache {
        topology: topology.clone(),
        batch,
        layer_data,
        effective,
        raw: weight_values.to_vec(),
        logits_len,
    };
    Ok((logits, cache))
}

/// Gradient of the loss with respect to each multiplier entry, summed over
/// the batch. Consumes the cache: it is single-use by construction.
pub fn backward_multiplier(cache: ActivationCache, loss_grad_logits: &Tensor) -> Result<Vec<f64>> {
    let raw = cache.raw.clone();
    let mut grad = backward_effective(cache, loss_grad_logits)?;
    for (g, w) in grad.iter_mut().zip(&raw) {
        *g *= w;
    }
    Ok(grad)
}

/// Gradient of the loss with respect to each effective weight
/// `multiplier_j * w_j`, summed over the batch.
pub fn backward_effective(cache: ActivationCache, loss_grad_logits: &Tensor) -> Result<Vec<f64>> {
    let ActivationCache {
        topology,
        batch,
        layer_data,
        effective,
        logits_len,
        ..
    } = cache;
    if loss_grad_logits.len() != batch * logits_len {
        return Err(Error::Shape(format!(
            "loss gradient has {} entries, logits had {}",
            loss_grad_logits.len(),
            batch * logits_len
        )));
    }

    let n = topology.param_count();
    let mut grad = vec![0.0; n];
    let mut upstream = loss_grad_logits.values().to_vec();
    let mut offset = n;
    for (i, layer) in topology.layers().iter().enumerate().rev() {
        let in_shape = topology.shape_before(i);
        let out_shape = topology.shape_before(i + 1);
        let data = &layer_data[i];
        match (*layer, data) {
            (LayerSpec::Dense { input, output }, LayerData::Weighted { input: x }) => {
                offset -= input * output;
                let eff = &effective[offset..offset + input * output];
                let dw = &mut grad[offset..offset + input * output];
                let mut dx = vec![0.0; batch * input];
                dense_backward(eff, x, &upstream, dw, &mut dx, batch, input, output);
                upstream = dx;
            }
            (
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                },
                LayerData::Weighted { input: x },
            ) => {
                let count = out_channels * in_channels * kernel * kernel;
                offset -= count;
                let eff = &effective[offset..offset + count];
                let dw = &mut grad[offset..offset + count];
                let (h, w) = (in_shape[1], in_shape[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let mut dx = vec![0.0; batch * in_channels * h * w];
                conv_backward(
                    eff,
                    x,
                    &upstream,
                    dw,
                    &mut dx,
                    batch,
                    in_channels,
                    h,
                    w,
                    out_channels,
                    oh,
                    ow,
                    kernel,
                    stride,
                    padding,
                );
                upstream = dx;
            }
            (LayerSpec::Relu, LayerData::Relu { gates }) => {
                for (g, open) in upstream.iter_mut().zip(gates) {
                    if !open {
                        *g = 0.0;
                    }
                }
            }
            (LayerSpec::MaxPool2d { .. }, LayerData::MaxPool { argmax }) => {
                let in_size: usize = in_shape.iter().product();
                let out_size: usize = out_shape.iter().product();
                let mut dx = vec![0.0; batch * in_size];
                for b in 0..batch {
                    let up = &upstream[b * out_size..(b + 1) * out_size];
                    let am = &argmax[b * out_size..(b + 1) * out_size];
                    let dxb = &mut dx[b * in_size..(b + 1) * in_size];
                    for (&g, &src) in up.iter().zip(am) {
                        dxb[src as usize] += g;
                    }
                }
                upstream = dx;
            }
            (LayerSpec::Flatten, LayerData::Flatten) => {}
            _ => unreachable!("cache layers align with topology"),
        }
    }
    Ok(grad)
}

fn dense_forward(
    eff: &[f64],
    x: &[f64],
    out: &mut [f64],
    batch: usize,
    input: usize,
    output: usize,
) {
    for b in 0..batch {
        let xrow = &x[b * input..(b + 1) * input];
        let yrow = &mut out[b * output..(b + 1) * output];
        for (o, y) in yrow.iter_mut().enumerate() {
            *y = dot(&eff[o * input..(o + 1) * input], xrow);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn dense_backward(
    eff: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    dx: &mut [f64],
    batch: usize,
    input: usize,
    output: usize,
) {
    for b in 0..batch {
        let xrow = &x[b * input..(b + 1) * input];
        let dyrow = &dy[b * output..(b + 1) * output];
        let dxrow = &mut dx[b * input..(b + 1) * input];
        for (o, &g) in dyrow.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            axpy(g, xrow, &mut dw[o * input..(o + 1) * input]);
            axpy(g, &eff[o * input..(o + 1) * input], dxrow);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    eff: &[f64],
    x: &[f64],
    out: &mut [f64],
    batch: usize,
    in_ch: usize,
    h: usize,
    w: usize,
    out_ch: usize,
    oh: usize,
    ow: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) {
    for b in 0..batch {
        for oc in 0..out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..in_ch {
                        for ky in 0..kernel {
                            let iy = oy * stride + ky;
                            if iy < padding || iy - padding >= h {
                                continue;
                            }
                            let iy = iy - padding;
                            for kx in 0..kernel {
                                let ix = ox * stride + kx;
                                if ix < padding || ix - padding >= w {
                                    continue;
                                }
                                let ix = ix - padding;
                                let widx = ((oc * in_ch + ic) * kernel + ky) * kernel + kx;
                                let xidx = ((b * in_ch + ic) * h + iy) * w + ix;
                                acc += eff[widx] * x[xidx];
                            }
                        }
                    }
                    out[((b * out_ch + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    eff: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    dx: &mut [f64],
    batch: usize,
    in_ch: usize,
    h: usize,
    w: usize,
    out_ch: usize,
    oh: usize,
    ow: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) {
    for b in 0..batch {
        for oc in 0..out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = dy[((b * out_ch + oc) * oh + oy) * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    for ic in 0..in_ch {
                        for ky in 0..kernel {
                            let iy = oy * stride + ky;
                            if iy < padding || iy - padding >= h {
                                continue;
                            }
                            let iy = iy - padding;
                            for kx in 0..kernel {
                                let ix = ox * stride + kx;
                                if ix < padding || ix - padding >= w {
                                    continue;
                                }
                                let ix = ix - padding;
                                let widx = ((oc * in_ch + ic) * kernel + ky) * kernel + kx;
                                let xidx = ((b * in_ch + ic) * h + iy) * w + ix;
                                dw[widx] += g * x[xidx];
                                dx[xidx] += g * eff[widx];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn pool_forward(
    x: &[f64],
    out: &mut [f64],
    argmax: &mut [u32],
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    window: usize,
) {
    for b in 0..batch {
        for ch in 0..c {
            let plane = (b * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    // Scan in flat-index order; strict > keeps the lowest
                    // flat index on ties.
                    for ky in 0..window {
                        for kx in 0..window {
                            let idx = (oy * window + ky) * w + (ox * window + kx);
                            let v = x[plane + idx];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    let oidx = (b * c + ch) * oh * ow + oy * ow + ox;
                    out[oidx] = best;
                    // argmax is relative to the (b, ch) plane start.
                    argmax[oidx] = (ch * h * w + best_idx) as u32;
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let quads = a.len() / 4 * 4;
    let (a4, ar) = a.split_at(quads);
    let (b4, br) = b.split_at(quads);
    let mut acc0 = 0.0;
    let mut acc1 = 0.0;
    let mut acc2 = 0.0;
    let mut acc3 = 0.0;
    for (ca, cb) in a4.chunks_exact(4).zip(b4.chunks_exact(4)) {
        acc0 += ca[0] * cb[0];
        acc1 += ca[1] * cb[1];
        acc2 += ca[2] * cb[2];
        acc3 += ca[3] * cb[3];
    }
    let mut acc = (acc0 + acc1) + (acc2 + acc3);
    for (x, y) in ar.iter().zip(br) {
        acc += x * y;
    }
    acc
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
