//! Forward and backward passes for the layer kinds used by the three
//! architectures. Activations are batch-major flat buffers: element
//! `[b, j]` lives at `b * width + j`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Layer, ModelSpec, NnError, Weights};

/// Epsilon inside the normalization denominator.
const NORM_EPS: f64 = 1e-8;
/// Momentum of the running-statistics update during training.
pub(crate) const NORM_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers.
    Train,
    /// Running statistics, dropout disabled, fully deterministic.
    Infer,
}

pub(crate) enum Extra {
    None,
    /// Argmax source index (within the batch row) per pooled output.
    PoolArg(Vec<u32>),
    /// Dropout multiplier per element: 0 or 1/(1-rate).
    Mask(Vec<f64>),
    /// Batch mean and variance per feature.
    Norm { mean: Vec<f64>, var: Vec<f64> },
}

pub(crate) struct TapeEntry {
    pub input: Vec<f64>,
    pub extra: Extra,
}

fn dense_forward(params: &[f64], inputs: usize, outputs: usize, x: &[f64], batch: usize) -> Vec<f64> {
    let (w, bias) = params.split_at(inputs * outputs);
    let mut y = vec![0.0; batch * outputs];
    for b in 0..batch {
        let xr = &x[b * inputs..(b + 1) * inputs];
        let yr = &mut y[b * outputs..(b + 1) * outputs];
        for (o, yo) in yr.iter_mut().enumerate() {
            let wr = &w[o * inputs..(o + 1) * inputs];
            let mut acc = 0.0;
            for (wi, xi) in wr.iter().zip(xr) {
                acc += wi * xi;
            }
            *yo = acc + bias[o];
        }
    }
    y
}

fn dense_backward(
    params: &[f64],
    grads: &mut [f64],
    inputs: usize,
    outputs: usize,
    x: &[f64],
    dy: &[f64],
    batch: usize,
) -> Vec<f64> {
    let w = &params[..inputs * outputs];
    let (gw, gb) = grads.split_at_mut(inputs * outputs);
    let mut dx = vec![0.0; batch * inputs];
    for b in 0..batch {
        let xr = &x[b * inputs..(b + 1) * inputs];
        let dyr = &dy[b * outputs..(b + 1) * outputs];
        let dxr = &mut dx[b * inputs..(b + 1) * inputs];
        for (o, &d) in dyr.iter().enumerate() {
            gb[o] += d;
            let wr = &w[o * inputs..(o + 1) * inputs];
            let gwr = &mut gw[o * inputs..(o + 1) * inputs];
            for i in 0..inputs {
                gwr[i] += d * xr[i];
                dxr[i] += d * wr[i];
            }
        }
    }
    dx
}

/// Offsets of a 3x3x3 neighborhood in (dz,dy,dx) scan order.
fn conv_offsets() -> [(i64, i64, i64); 27] {
    let mut out = [(0i64, 0i64, 0i64); 27];
    let mut k = 0;
    for dz in -1..=1 {
        for dy in -1..=1 {
            for dx in -1..=1 {
                out[k] = (dz, dy, dx);
                k += 1;
            }
        }
    }
    out
}

fn conv3_forward(
    params: &[f64],
    side: usize,
    in_ch: usize,
    out_ch: usize,
    x: &[f64],
    batch: usize,
) -> Vec<f64> {
    let s = side as i64;
    let voxels = side * side * side;
    let (w, bias) = params.split_at(27 * in_ch * out_ch);
    let offs = conv_offsets();
    let mut y = vec![0.0; batch * out_ch * voxels];
    for b in 0..batch {
        let xrow = &x[b * in_ch * voxels..(b + 1) * in_ch * voxels];
        let yrow = &mut y[b * out_ch * voxels..(b + 1) * out_ch * voxels];
        for oc in 0..out_ch {
            for z in 0..s {
                for yy in 0..s {
                    for xx in 0..s {
                        let mut acc = bias[oc];
                        for ic in 0..in_ch {
                            let base = ic * voxels;
                            let wbase = (oc * in_ch + ic) * 27;
                            for (k, &(dz, dy, dx)) in offs.iter().enumerate() {
                                let (pz, py, px) = (z + dz, yy + dy, xx + dx);
                                if pz < 0 || py < 0 || px < 0 || pz >= s || py >= s || px >= s {
                                    continue;
                                }
                                let idx = base + (pz * s * s + py * s + px) as usize;
                                acc += w[wbase + k] * xrow[idx];
                            }
                        }
                        yrow[oc * voxels + (z * s * s + yy * s + xx) as usize] = acc;
                    }
                }
            }
        }
    }
    y
}

fn conv3_backward(
    params: &[f64],
    grads: &mut [f64],
    side: usize,
    in_ch: usize,
    out_ch: usize,
    x: &[f64],
    dy: &[f64],
    batch: usize,
) -> Vec<f64> {
    let s = side as i64;
    let voxels = side * side * side;
    let w = &params[..27 * in_ch * out_ch];
    let (gw, gb) = grads.split_at_mut(27 * in_ch * out_ch);
    let offs = conv_offsets();
    let mut dx = vec![0.0; batch * in_ch * voxels];
    for b in 0..batch {
        let xrow = &x[b * in_ch * voxels..(b + 1) * in_ch * voxels];
        let dyrow = &dy[b * out_ch * voxels..(b + 1) * out_ch * voxels];
        let dxrow = &mut dx[b * in_ch * voxels..(b + 1) * in_ch * voxels];
        for oc in 0..out_ch {
            for z in 0..s {
                for yy in 0..s {
                    for xx in 0..s {
                        let d = dyrow[oc * voxels + (z * s * s + yy * s + xx) as usize];
                        if d == 0.0 {
                            continue;
                        }
                        gb[oc] += d;
                        for ic in 0..in_ch {
                            let base = ic * voxels;
                            let wbase = (oc * in_ch + ic) * 27;
                            for (k, &(dz, dyo, dxo)) in offs.iter().enumerate() {
                                let (pz, py, px) = (z + dz, yy + dyo, xx + dxo);
                                if pz < 0 || py < 0 || px < 0 || pz >= s || py >= s || px >= s {
                                    continue;
                                }
                                let idx = base + (pz * s * s + py * s + px) as usize;
                                gw[wbase + k] += d * xrow[idx];
                                dxrow[idx] += d * w[wbase + k];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

fn pool_forward(side: usize, channels: usize, x: &[f64], batch: usize) -> (Vec<f64>, Vec<u32>) {
    let half = side / 2;
    let in_vox = side * side * side;
    let out_vox = half * half * half;
    let mut y = vec![0.0; batch * channels * out_vox];
    let mut arg = vec![0u32; batch * channels * out_vox];
    for b in 0..batch {
        let xrow = &x[b * channels * in_vox..(b + 1) * channels * in_vox];
        for c in 0..channels {
            for z in 0..half {
                for yy in 0..half {
                    for xx in 0..half {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for dz in 0..2 {
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    let idx = c * in_vox
                                        + (2 * z + dz) * side * side
                                        + (2 * yy + dy) * side
                                        + (2 * xx + dx);
                                    if xrow[idx] > best {
                                        best = xrow[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                        }
                        let o = b * channels * out_vox + c * out_vox + z * half * half + yy * half + xx;
                        y[o] = best;
                        arg[o] = best_idx as u32;
                    }
                }
            }
        }
    }
    (y, arg)
}

fn featurenorm_stats(x: &[f64], batch: usize, features: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; features];
    let mut var = vec![0.0; features];
    for b in 0..batch {
        for (j, m) in mean.iter_mut().enumerate() {
            *m += x[b * features + j];
        }
    }
    for m in &mut mean {
        *m /= batch as f64;
    }
    for b in 0..batch {
        for (j, v) in var.iter_mut().enumerate() {
            let d = x[b * features + j] - mean[j];
            *v += d * d;
        }
    }
    for v in &mut var {
        *v /= batch as f64;
    }
    (mean, var)
}

/// Run the network over a batch. `Infer` uses running statistics and is
/// bit-deterministic; `Train` uses batch statistics. Dropout is inactive
/// here in both modes (the training loop samples its own masks).
pub fn forward(
    spec: &ModelSpec,
    weights: &Weights,
    x: &[f64],
    batch: usize,
    mode: Mode,
) -> Result<Vec<f64>, NnError> {
    weights.validate(spec)?;
    if batch == 0 || x.len() != batch * spec.input_width {
        return Err(NnError::ShapeMismatch { actual: x.len(), expected: batch * spec.input_width });
    }
    let mut stats = weights.stats.clone();
    let y = forward_internal(spec, &weights.params, &mut stats, x, batch, mode, None, None);
    Ok(y)
}

/// Forward pass shared by inference and training. With `tape` the
/// per-layer inputs needed by backward are recorded; with `dropout_rng`
/// inverted-dropout masks are sampled; in train mode running statistics in
/// `stats` are updated.
#[allow(clippy::too_many_arguments)]
pub(crate) fn forward_internal(
    spec: &ModelSpec,
    params: &[f64],
    stats: &mut [f64],
    x: &[f64],
    batch: usize,
    mode: Mode,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
    mut tape: Option<&mut Vec<TapeEntry>>,
) -> Vec<f64> {
    let mut act = x.to_vec();
    let mut poff = 0usize;
    let mut soff = 0usize;
    for layer in &spec.layers {
        let np = layer.param_count();
        let lp = &params[poff..poff + np];
        let mut extra = Extra::None;
        let out = match *layer {
            Layer::Dense { inputs, outputs } => dense_forward(lp, inputs, outputs, &act, batch),
            Layer::Conv3 { side, in_channels, out_channels } => {
                conv3_forward(lp, side, in_channels, out_channels, &act, batch)
            }
            Layer::MaxPool3 { side, channels } => {
                let (y, arg) = pool_forward(side, channels, &act, batch);
                extra = Extra::PoolArg(arg);
                y
            }
            Layer::Relu => act.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
            Layer::Sigmoid => act.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
            Layer::Dropout { rate } => {
                if let (Mode::Train, Some(rng)) = (mode, dropout_rng.as_deref_mut()) {
                    if rate > 0.0 {
                        let keep = 1.0 - rate;
                        let scale = 1.0 / keep;
                        let mask: Vec<f64> = act
                            .iter()
                            .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
                            .collect();
                        let y = act.iter().zip(&mask).map(|(v, m)| v * m).collect();
                        extra = Extra::Mask(mask);
                        y
                    } else {
                        act.clone()
                    }
                } else {
                    act.clone()
                }
            }
            Layer::FeatureNorm { features } => {
                let (gamma, beta) = lp.split_at(features);
                match mode {
                    Mode::Train => {
                        let (mean, var) = featurenorm_stats(&act, batch, features);
                        let mut y = vec![0.0; act.len()];
                        for b in 0..batch {
                            for j in 0..features {
                                let xh = (act[b * features + j] - mean[j]) / (var[j] + NORM_EPS).sqrt();
                                y[b * features + j] = gamma[j] * xh + beta[j];
                            }
                        }
                        // running statistics
                        let (rm, rv) = stats[soff..soff + 2 * features].split_at_mut(features);
                        for j in 0..features {
                            rm[j] = NORM_MOMENTUM * rm[j] + (1.0 - NORM_MOMENTUM) * mean[j];
                            rv[j] = NORM_MOMENTUM * rv[j] + (1.0 - NORM_MOMENTUM) * var[j];
                        }
                        extra = Extra::Norm { mean, var };
                        y
                    }
                    Mode::Infer => {
                        let (rm, rv) = stats[soff..soff + 2 * features].split_at(features);
                        let mut y = vec![0.0; act.len()];
                        for b in 0..batch {
                            for j in 0..features {
                                let xh = (act[b * features + j] - rm[j]) / (rv[j] + NORM_EPS).sqrt();
                                y[b * features + j] = gamma[j] * xh + beta[j];
                            }
                        }
                        y
                    }
                }
            }
        };
        if let Some(t) = tape.as_deref_mut() {
            t.push(TapeEntry { input: std::mem::take(&mut act), extra });
        }
        act = out;
        poff += np;
        soff += layer.stat_count();
    }
    act
}

/// Backpropagate `dy` through the taped forward pass, accumulating
/// parameter gradients into `grads` (same layout as the flat params).
pub(crate) fn backward(
    spec: &ModelSpec,
    params: &[f64],
    tape: &[TapeEntry],
    batch: usize,
    dy: Vec<f64>,
    grads: &mut [f64],
) {
    let mut offsets = Vec::with_capacity(spec.layers.len());
    let mut poff = 0usize;
    for layer in &spec.layers {
        offsets.push(poff);
        poff += layer.param_count();
    }

    let mut d = dy;
    for (li, layer) in spec.layers.iter().enumerate().rev() {
        let entry = &tape[li];
        let x = &entry.input;
        let poff = offsets[li];
        let np = layer.param_count();
        let lp = &params[poff..poff + np];
        let lg = &mut grads[poff..poff + np];
        d = match *layer {
            Layer::Dense { inputs, outputs } => dense_backward(lp, lg, inputs, outputs, x, &d, batch),
            Layer::Conv3 { side, in_channels, out_channels } => {
                conv3_backward(lp, lg, side, in_channels, out_channels, x, &d, batch)
            }
            Layer::MaxPool3 { .. } => {
                let Extra::PoolArg(arg) = &entry.extra else { unreachable!() };
                let per_row_out = d.len() / batch;
                let per_row_in = x.len() / batch;
                let mut dx = vec![0.0; x.len()];
                for b in 0..batch {
                    for o in 0..per_row_out {
                        let src = arg[b * per_row_out + o] as usize;
                        dx[b * per_row_in + src] += d[b * per_row_out + o];
                    }
                }
                dx
            }
            Layer::Relu => x.iter().zip(&d).map(|(&xi, &di)| if xi > 0.0 { di } else { 0.0 }).collect(),
            Layer::Sigmoid => x
                .iter()
                .zip(&d)
                .map(|(&xi, &di)| {
                    let s = 1.0 / (1.0 + (-xi).exp());
                    di * s * (1.0 - s)
                })
                .collect(),
            Layer::Dropout { .. } => match &entry.extra {
                Extra::Mask(mask) => d.iter().zip(mask).map(|(&di, &m)| di * m).collect(),
                _ => d,
            },
            Layer::FeatureNorm { features } => {
                let Extra::Norm { mean, var } = &entry.extra else {
                    unreachable!("featurenorm backward requires train-mode tape")
                };
                let (gamma, _beta) = lp.split_at(features);
                let (ggamma, gbeta) = lg.split_at_mut(features);
                let bf = batch as f64;
                let mut dx = vec![0.0; x.len()];
                for j in 0..features {
                    let inv = 1.0 / (var[j] + NORM_EPS).sqrt();
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xm = 0.0;
                    for b in 0..batch {
                        let idx = b * features + j;
                        let xm = x[idx] - mean[j];
                        let xh = xm * inv;
                        ggamma[j] += d[idx] * xh;
                        gbeta[j] += d[idx];
                        let dxh = d[idx] * gamma[j];
                        sum_dxh += dxh;
                        sum_dxh_xm += dxh * xm;
                    }
                    let dvar = sum_dxh_xm * (-0.5) * inv * inv * inv;
                    let dmean = -sum_dxh * inv;
                    for b in 0..batch {
                        let idx = b * features + j;
                        let xm = x[idx] - mean[j];
                        dx[idx] = d[idx] * gamma[j] * inv + dvar * 2.0 * xm / bf + dmean / bf;
                    }
                }
                dx
            }
        };
    }
}

/// Mean-squared-error loss and its analytic parameter gradients on one
/// batch, dropout disabled, batch statistics in normalization layers.
/// The reference point for finite-difference checks.
pub fn loss_and_gradients(
    spec: &ModelSpec,
    weights: &Weights,
    x: &[f64],
    batch: usize,
    targets: &[f64],
) -> Result<(f64, Vec<f64>), NnError> {
    weights.validate(spec)?;
    if batch == 0 || x.len() != batch * spec.input_width || targets.len() != batch {
        return Err(NnError::ShapeMismatch { actual: x.len(), expected: batch * spec.input_width });
    }
    let mut stats = weights.stats.clone();
    let mut tape = Vec::with_capacity(spec.layers.len());
    let preds = forward_internal(spec, &weights.params, &mut stats, x, batch, Mode::Train, None, Some(&mut tape));
    let bf = batch as f64;
    let loss = preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / bf;
    let dy: Vec<f64> = preds.iter().zip(targets).map(|(p, t)| 2.0 * (p - t) / bf).collect();
    let mut grads = vec![0.0; weights.params.len()];
    backward(spec, &weights.params, &tape, batch, dy, &mut grads);
    Ok((loss, grads))
}
