use serde::{Deserialize, Serialize};

use super::layers::Tensor;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

impl Adam {
    /// One update. The step counter is incremented before bias correction,
    /// so the first call uses `t = 1`. Params are untouched on error.
    pub fn step(&self, params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
        if params.len() != grads.len() || params.len() != state.m.len() {
            return Err(Error::shape("adam tensors", params.len(), grads.len()));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::shape("adam tensor", p.len(), g.len()));
            }
        }
        if grads.iter().any(|g| g.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("parameter gradient".into()));
        }
        state.t += 1;
        let t = state.t as f64;
        let c1 = 1.0 - self.beta1.powf(t);
        let c2 = 1.0 - self.beta2.powf(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut state.m[i];
            let v = &mut state.v[i];
            for j in 0..p.data.len() {
                let gj = g.data[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p.data[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Vec<Tensor> {
        vec![Tensor::new(&[1], vec![v]).unwrap()]
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let adam = Adam::new(0.01);
        let mut p = one(0.7);
        let mut st = AdamState::new(&p);
        adam.step(&mut p, &one(0.0), &mut st).unwrap();
        assert_eq!(p[0].data[0], 0.7);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn first_step_closed_form() {
        // m̂ = g, v̂ = g², so Δ = -lr · g / (|g| + eps).
        let adam = Adam::new(0.01);
        let mut p = one(0.0);
        let mut st = AdamState::new(&p);
        adam.step(&mut p, &one(1.0), &mut st).unwrap();
        let expected = -0.01 * 1.0 / (1.0 + 1e-8);
        assert!((p[0].data[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let adam = Adam::new(0.01);
        let mut p = one(0.0);
        let mut st = AdamState::new(&p);
        let mut prev = 0.0;
        let mut last_delta = 0.0;
        for _ in 0..2000 {
            adam.step(&mut p, &one(0.3), &mut st).unwrap();
            last_delta = p[0].data[0] - prev;
            prev = p[0].data[0];
        }
        assert!((last_delta.abs() - 0.01).abs() < 0.01 * 0.01);
    }

    #[test]
    fn non_finite_gradient_is_divergence_and_leaves_params() {
        let adam = Adam::new(0.01);
        let mut p = one(0.5);
        let mut st = AdamState::new(&p);
        assert!(matches!(adam.step(&mut p, &one(f64::NAN), &mut st), Err(Error::NonFinite(_))));
        assert_eq!(p[0].data[0], 0.5);
        assert_eq!(st.steps(), 0);
    }
}
