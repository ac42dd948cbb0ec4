//! Forward evaluation and reverse-mode gradients of the full network.

use super::layers::{self, FeatureMap, Tensor};
use super::model::ModelParams;
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::signal::{Signal, DIMS};

/// Dropout behaviour of a forward pass.
pub enum Mode<'a> {
    Inference,
    Training(&'a mut StreamRng),
}

struct StageTrace {
    input: FeatureMap,
    pre_activation: FeatureMap,
    pool: usize,
    argmax: Vec<usize>,
}

/// Everything the backward pass needs from a forward pass.
pub struct ForwardTrace {
    training: bool,
    stages: Vec<StageTrace>,
    /// Input of each dense layer (post-activation, post-dropout).
    dense_inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden dense layer.
    dense_pre: Vec<Vec<f64>>,
    dropout_mask: Vec<f64>,
    output: f64,
}

impl ForwardTrace {
    pub fn output(&self) -> f64 {
        self.output
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    /// Pooling argmax indices of conv stage `i`.
    pub fn argmax(&self, i: usize) -> &[usize] {
        &self.stages[i].argmax
    }

    /// True when both passes took the same piece of the piecewise-linear
    /// network: identical ReLU signs, pooling winners and dropout masks.
    /// Between two such inputs the score is exactly linear.
    pub fn same_linear_piece(&self, other: &ForwardTrace) -> bool {
        let signs = |v: &[f64], w: &[f64]| v.len() == w.len() && v.iter().zip(w).all(|(a, b)| (*a > 0.0) == (*b > 0.0));
        self.stages.len() == other.stages.len()
            && self.stages.iter().zip(&other.stages).all(|(a, b)| {
                a.argmax == b.argmax && signs(&a.pre_activation.data, &b.pre_activation.data)
            })
            && self.dense_pre.len() == other.dense_pre.len()
            && self.dense_pre.iter().zip(&other.dense_pre).all(|(a, b)| signs(a, b))
            && self.dropout_mask == other.dropout_mask
    }

    /// Smallest distance from any pre-activation to 0 and from any pooling
    /// winner to its runner-up. Finite-difference checks need both to be
    /// clear of the step size.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for st in &self.stages {
            let z = &st.pre_activation;
            for &v in &z.data {
                margin = margin.min(v.abs());
            }
            let pooled = st.argmax.len() / z.channels;
            for c in 0..z.channels {
                let row = z.row(c);
                for j in 0..pooled {
                    let best = st.argmax[c * pooled + j];
                    if row[best] <= 0.0 {
                        continue;
                    }
                    for t in j * st.pool..(j + 1) * st.pool {
                        if t != best {
                            margin = margin.min(row[best] - row[t].max(0.0));
                        }
                    }
                }
            }
        }
        for z in self.dense_pre.iter().flatten() {
            margin = margin.min(z.abs());
        }
        margin
    }
}

/// Gradients from one backward pass.
pub struct Gradients {
    pub input: Option<Signal>,
    pub params: Option<Vec<Tensor>>,
}

pub fn loss_l1(score_hat: f64, score: f64) -> f64 {
    (score_hat - score) * (score_hat - score)
}

pub fn loss_l2(score_hat: f64) -> f64 {
    score_hat * score_hat
}

fn check_input(model: &ModelParams, x: &Signal) -> Result<()> {
    if model.arch.input_channels != DIMS || model.arch.input_len != x.len() {
        return Err(Error::shape(
            "network input",
            format!("{}x{}", model.arch.input_channels, model.arch.input_len),
            format!("{DIMS}x{}", x.len()),
        ));
    }
    Ok(())
}

/// conv → ReLU → pool ×4, flatten, dense → ReLU → dropout → dense.
/// Returns the raw (unclamped) score and the trace.
pub fn forward(model: &ModelParams, x: &Signal, mode: Mode<'_>) -> Result<(f64, ForwardTrace)> {
    check_input(model, x)?;
    let arch = &model.arch;
    let (training, mut rng) = match mode {
        Mode::Inference => (false, None),
        Mode::Training(r) => (true, Some(r)),
    };

    let mut current = FeatureMap::new(DIMS, x.len(), x.as_slice().to_vec())?;
    let mut stages = Vec::with_capacity(arch.n_conv());
    for (i, &pool) in arch.pool_sizes.iter().enumerate() {
        let pre = layers::conv1d_forward(&current, model.conv(i))?;
        let act = FeatureMap {
            channels: pre.channels,
            len: pre.len,
            data: layers::relu_forward(&pre.data),
        };
        let (pooled, argmax) = layers::maxpool_forward(&act, pool)?;
        stages.push(StageTrace {
            input: current,
            pre_activation: pre,
            pool,
            argmax,
        });
        current = pooled;
    }

    let n_dense = arch.dense_sizes.len();
    let mut h = current.data;
    let mut dense_inputs = Vec::with_capacity(n_dense);
    let mut dense_pre = Vec::with_capacity(n_dense - 1);
    let mut dropout_mask = Vec::new();
    for j in 0..n_dense - 1 {
        let z = layers::dense_forward(&h, model.dense(j))?;
        let mut a = layers::relu_forward(&z);
        if j == n_dense - 2 {
            let (out, mask) = layers::dropout_forward(&a, arch.dropout_p, rng.as_deref_mut());
            a = out;
            dropout_mask = mask;
        }
        dense_inputs.push(h);
        dense_pre.push(z);
        h = a;
    }
    let out = layers::dense_forward(&h, model.dense(n_dense - 1))?;
    dense_inputs.push(h);
    let output = out[0];
    Ok((
        output,
        ForwardTrace {
            training,
            stages,
            dense_inputs,
            dense_pre,
            dropout_mask,
            output,
        },
    ))
}

/// Inference-mode score `ŝ(x)`.
pub fn predict(model: &ModelParams, x: &Signal) -> Result<f64> {
    Ok(forward(model, x, Mode::Inference)?.0)
}

/// Backpropagates `d_output = ∂loss/∂ŝ` through a trace.
pub fn backward(
    model: &ModelParams,
    trace: &ForwardTrace,
    d_output: f64,
    want_input: bool,
    want_params: bool,
) -> Result<Gradients> {
    let arch = &model.arch;
    if trace.stages.len() != arch.n_conv() || trace.dense_inputs.len() != arch.dense_sizes.len() {
        return Err(Error::Internal("trace does not match architecture".into()));
    }
    let n_conv = arch.n_conv();
    let n_dense = arch.dense_sizes.len();
    let mut param_grads: Vec<Option<Tensor>> = vec![None; n_conv + n_dense];

    let mut g = vec![d_output];
    for j in (0..n_dense).rev() {
        if j < n_dense - 1 {
            if j == n_dense - 2 {
                g = layers::dropout_backward(&trace.dropout_mask, &g);
            }
            g = layers::relu_backward(&trace.dense_pre[j], &g);
        }
        let (gi, gw) = layers::dense_backward(&trace.dense_inputs[j], model.dense(j), &g)?;
        if want_params {
            param_grads[n_conv + j] = Some(gw);
        }
        g = gi;
    }

    let last = &trace.stages[n_conv - 1];
    let mut gmap = FeatureMap::new(last.pre_activation.channels, last.argmax.len() / last.pre_activation.channels, g)?;
    for i in (0..n_conv).rev() {
        let st = &trace.stages[i];
        let routed = layers::maxpool_backward(&st.argmax, st.pre_activation.len, &gmap)?;
        let through = FeatureMap {
            channels: routed.channels,
            len: routed.len,
            data: layers::relu_backward(&st.pre_activation.data, &routed.data),
        };
        let need_input = i > 0 || want_input;
        if want_params {
            let (gi, gw) = layers::conv1d_backward(&st.input, model.conv(i), &through, need_input)?;
            param_grads[i] = Some(gw);
            if let Some(gi) = gi {
                gmap = gi;
            }
        } else if need_input {
            gmap = layers::conv1d_backward_input(st.input.len, model.conv(i), &through)?;
        }
        if !need_input {
            break;
        }
    }

    let input = if want_input {
        Some(Signal::from_flat(gmap.len, gmap.data)?)
    } else {
        None
    };
    let params = if want_params {
        Some(param_grads.into_iter().map(|t| t.expect("all layers visited")).collect())
    } else {
        None
    };
    Ok(Gradients { input, params })
}

/// `ŝ(x)` and `∂ŝ/∂x`, inference mode.
pub fn score_gradient(model: &ModelParams, x: &Signal) -> Result<(f64, Signal)> {
    let (s, trace) = forward(model, x, Mode::Inference)?;
    let g = backward(model, &trace, 1.0, true, false)?;
    Ok((s, g.input.expect("requested")))
}

/// `∂l2/∂x = 2ŝ(x) · ∂ŝ/∂x`, inference mode. Also returns `ŝ(x)`.
pub fn l2_input_gradient(model: &ModelParams, x: &Signal) -> Result<(f64, Signal)> {
    let (s, trace) = forward(model, x, Mode::Inference)?;
    let g = backward(model, &trace, 2.0 * s, true, false)?;
    Ok((s, g.input.expect("requested")))
}

/// Exact gradient of `l2 = ŝ(x)²` with respect to every entry of `x`.
pub fn backward_to_input(model: &ModelParams, x: &Signal) -> Result<Signal> {
    Ok(l2_input_gradient(model, x)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{init_params, ArchDescriptor};
    use crate::rng;

    fn setup() -> (ModelParams, Signal) {
        let arch = ArchDescriptor::standard(300).unwrap();
        let m = init_params(&arch, 3).unwrap();
        let mut r = rng::stream(5, 0, 0);
        let mut x = Signal::zeros(300);
        use rand::Rng;
        for v in x.as_mut_slice() {
            *v = r.random_range(-1.0..1.0);
        }
        (m, x)
    }

    #[test]
    fn zero_weights_score_zero() {
        let (m, x) = setup();
        let z = ModelParams::zeros(&m.arch).unwrap();
        assert_eq!(predict(&z, &x).unwrap(), 0.0);
        assert!(backward_to_input(&z, &x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_signal_scores_exactly_zero() {
        let (m, _) = setup();
        assert_eq!(predict(&m, &Signal::zeros(300)).unwrap(), 0.0);
        assert!(backward_to_input(&m, &Signal::zeros(300)).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_length_is_shape_error() {
        let (m, _) = setup();
        assert!(matches!(predict(&m, &Signal::zeros(301)), Err(Error::Shape { .. })));
    }

    #[test]
    fn inference_is_deterministic_training_depends_on_stream() {
        let (m, x) = setup();
        assert_eq!(predict(&m, &x).unwrap(), predict(&m, &x).unwrap());
        let mut r1 = rng::stream(1, 0, 0);
        let mut r2 = rng::stream(1, 0, 0);
        let a = forward(&m, &x, Mode::Training(&mut r1)).unwrap().0;
        let b = forward(&m, &x, Mode::Training(&mut r2)).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn losses() {
        assert_eq!(loss_l1(2.0, 2.0), 0.0);
        assert_eq!(loss_l2(0.0), 0.0);
        assert_eq!(loss_l1(3.0, 1.0), 4.0);
        assert_eq!(loss_l2(3.0), 9.0);
    }

    #[test]
    fn trace_shapes_match_architecture() {
        let (m, x) = setup();
        let (_, trace) = forward(&m, &x, Mode::Inference).unwrap();
        assert_eq!(trace.n_stages(), 4);
        assert!(!trace.is_training());
        for (i, st) in m.arch.stages().unwrap().iter().enumerate() {
            assert_eq!(trace.argmax(i).len(), st.out_channels * st.pooled_len);
            assert!(trace.argmax(i).iter().all(|&a| a < st.conv_len));
        }
    }
}
