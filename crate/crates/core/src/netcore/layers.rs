//! Layer primitives on flat row-major buffers.
//!
//! A feature map with `C` channels and `L` time steps is stored as
//! `data[c * L + t]`. Convolution weights are `[out][in][k]`, dense weights
//! `[out][in]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, len: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * len {
            return Err(Error::shape("feature map", channels * len, data.len()));
        }
        Ok(FeatureMap { channels, len, data })
    }

    pub fn zeros(channels: usize, len: usize) -> Self {
        FeatureMap {
            channels,
            len,
            data: vec![0.0; channels * len],
        }
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.len..(c + 1) * self.len]
    }
}

/// Weight tensor with an explicit shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::shape("tensor", n, data.len()));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with four fixed accumulators; the summation order is fixed
/// so results are reproducible.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..n {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn conv_dims(input: &FeatureMap, weights: &Tensor) -> Result<(usize, usize, usize)> {
    let [c_out, c_in, k] = weights.shape[..] else {
        return Err(Error::shape("conv1d weights", "3-d tensor", format!("{:?}", weights.shape)));
    };
    if c_in != input.channels {
        return Err(Error::shape("conv1d input channels", c_in, input.channels));
    }
    if k == 0 || input.len < k {
        return Err(Error::shape("conv1d input length", format!(">= {k}"), input.len));
    }
    Ok((c_out, c_in, k))
}

/// Valid cross-correlation, stride 1, no bias:
/// `out[o][t] = Σ_{c,k} w[o][c][k] · in[c][t+k]`.
pub fn conv1d_forward(input: &FeatureMap, weights: &Tensor) -> Result<FeatureMap> {
    let (c_out, c_in, k) = conv_dims(input, weights)?;
    let out_len = input.len - k + 1;
    let mut out = FeatureMap::zeros(c_out, out_len);
    for o in 0..c_out {
        let row = out.row_mut(o);
        for c in 0..c_in {
            let src = input.row(c);
            let w = &weights.data[(o * c_in + c) * k..(o * c_in + c + 1) * k];
            for (kk, &wk) in w.iter().enumerate() {
                axpy(wk, &src[kk..kk + out_len], row);
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`conv1d_forward`]. Returns the input gradient (when
/// requested) and the weight gradient.
pub fn conv1d_backward(
    input: &FeatureMap,
    weights: &Tensor,
    upstream: &FeatureMap,
    want_input: bool,
) -> Result<(Option<FeatureMap>, Tensor)> {
    let (c_out, c_in, k) = conv_dims(input, weights)?;
    let out_len = input.len - k + 1;
    if upstream.channels != c_out || upstream.len != out_len {
        return Err(Error::shape(
            "conv1d upstream",
            format!("{c_out}x{out_len}"),
            format!("{}x{}", upstream.channels, upstream.len),
        ));
    }
    let mut grad_w = Tensor::zeros(&weights.shape);
    let mut grad_in = want_input.then(|| FeatureMap::zeros(c_in, input.len));
    for o in 0..c_out {
        let g = upstream.row(o);
        for c in 0..c_in {
            let base = (o * c_in + c) * k;
            let src = input.row(c);
            for kk in 0..k {
                grad_w.data[base + kk] = dot(g, &src[kk..kk + out_len]);
            }
            if let Some(gi) = grad_in.as_mut() {
                let dst = gi.row_mut(c);
                for kk in 0..k {
                    axpy(weights.data[base + kk], g, &mut dst[kk..kk + out_len]);
                }
            }
        }
    }
    Ok((grad_in, grad_w))
}

/// Input gradient only; skips the weight gradient.
pub fn conv1d_backward_input(input_len: usize, weights: &Tensor, upstream: &FeatureMap) -> Result<FeatureMap> {
    let [c_out, c_in, k] = weights.shape[..] else {
        return Err(Error::shape("conv1d weights", "3-d tensor", format!("{:?}", weights.shape)));
    };
    if input_len < k || upstream.channels != c_out || upstream.len != input_len - k + 1 {
        return Err(Error::shape("conv1d upstream", c_out, upstream.channels));
    }
    let out_len = upstream.len;
    let mut grad_in = FeatureMap::zeros(c_in, input_len);
    for o in 0..c_out {
        let g = upstream.row(o);
        for c in 0..c_in {
            let base = (o * c_in + c) * k;
            let dst = grad_in.row_mut(c);
            for kk in 0..k {
                axpy(weights.data[base + kk], g, &mut dst[kk..kk + out_len]);
            }
        }
    }
    Ok(grad_in)
}

/// Non-overlapping max pooling with stride `window`; a trailing remainder
/// shorter than the window is dropped. Ties go to the lowest index.
/// Returns the pooled map and, per output cell, the time index of the
/// selected input within its channel.
pub fn maxpool_forward(input: &FeatureMap, window: usize) -> Result<(FeatureMap, Vec<usize>)> {
    if window == 0 || input.len < window {
        return Err(Error::shape("maxpool input length", format!(">= {window}"), input.len));
    }
    let out_len = input.len / window;
    let mut out = FeatureMap::zeros(input.channels, out_len);
    let mut argmax = Vec::with_capacity(input.channels * out_len);
    for c in 0..input.channels {
        let src = input.row(c);
        for j in 0..out_len {
            let start = j * window;
            let mut best = start;
            for t in start + 1..start + window {
                if src[t] > src[best] {
                    best = t;
                }
            }
            out.data[c * out_len + j] = src[best];
            argmax.push(best);
        }
    }
    Ok((out, argmax))
}

/// Routes each upstream value to its argmax position.
pub fn maxpool_backward(argmax: &[usize], input_len: usize, upstream: &FeatureMap) -> Result<FeatureMap> {
    if argmax.len() != upstream.data.len() {
        return Err(Error::Internal(format!(
            "maxpool indices ({}) do not match upstream size ({})",
            argmax.len(),
            upstream.data.len()
        )));
    }
    let mut grad = FeatureMap::zeros(upstream.channels, input_len);
    for c in 0..upstream.channels {
        for j in 0..upstream.len {
            let idx = argmax[c * upstream.len + j];
            if idx >= input_len {
                return Err(Error::Internal(format!("maxpool index {idx} out of range {input_len}")));
            }
            grad.data[c * input_len + idx] += upstream.data[c * upstream.len + j];
        }
    }
    Ok(grad)
}

pub fn relu_forward(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&v| v.max(0.0)).collect()
}

/// Passes upstream where the pre-activation is strictly positive.
pub fn relu_backward(pre_activation: &[f64], upstream: &[f64]) -> Vec<f64> {
    pre_activation
        .iter()
        .zip(upstream)
        .map(|(&z, &g)| if z > 0.0 { g } else { 0.0 })
        .collect()
}

fn dense_dims(weights: &Tensor, input_len: usize) -> Result<(usize, usize)> {
    let [out, inp] = weights.shape[..] else {
        return Err(Error::shape("dense weights", "2-d tensor", format!("{:?}", weights.shape)));
    };
    if inp != input_len {
        return Err(Error::shape("dense input", inp, input_len));
    }
    Ok((out, inp))
}

/// `W · input`.
pub fn dense_forward(input: &[f64], weights: &Tensor) -> Result<Vec<f64>> {
    let (out, inp) = dense_dims(weights, input.len())?;
    Ok((0..out).map(|o| dot(&weights.data[o * inp..(o + 1) * inp], input)).collect())
}

/// Returns `Wᵀ · upstream` and `upstream ⊗ input`.
pub fn dense_backward(input: &[f64], weights: &Tensor, upstream: &[f64]) -> Result<(Vec<f64>, Tensor)> {
    let (out, inp) = dense_dims(weights, input.len())?;
    if upstream.len() != out {
        return Err(Error::shape("dense upstream", out, upstream.len()));
    }
    let mut grad_in = vec![0.0; inp];
    let mut grad_w = Tensor::zeros(&weights.shape);
    for (o, &g) in upstream.iter().enumerate() {
        axpy(g, &weights.data[o * inp..(o + 1) * inp], &mut grad_in);
        axpy(g, input, &mut grad_w.data[o * inp..(o + 1) * inp]);
    }
    Ok((grad_in, grad_w))
}

/// Inverted dropout. `rng = None` is inference mode (identity). The returned
/// mask holds the per-unit multiplier: `0` or `1/(1-p)`.
pub fn dropout_forward<R: Rng + ?Sized>(input: &[f64], p: f64, rng: Option<&mut R>) -> (Vec<f64>, Vec<f64>) {
    match rng {
        Some(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            let mask: Vec<f64> = input.iter().map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
            let out = input.iter().zip(&mask).map(|(v, m)| v * m).collect();
            (out, mask)
        }
        _ => (input.to_vec(), vec![1.0; input.len()]),
    }
}

pub fn dropout_backward(mask: &[f64], upstream: &[f64]) -> Vec<f64> {
    mask.iter().zip(upstream).map(|(m, g)| m * g).collect()
}
