//! Gradient-based attribution methods.
//!
//! All methods differentiate `l2(x) = ŝ(x)²`, the squared distance of the
//! predicted score from the best possible score 0, with dropout inactive.
//!
//! * [`grad`] descends the input until `l2 ≤ ε` and returns `x - x'`, the
//!   change that had to be removed from the input. Its ideal value is
//!   `perturbed - ideal`.
//! * [`grad_x_input`], [`smoothgrad`] and [`integrated_gradients`] are the
//!   usual variants built on it (or, for integrated gradients, on the
//!   single-pass gradient along the path from the zero baseline).
//! * [`agra`] and [`agra_combined`] average a method over independently
//!   trained models.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::envelope;
use crate::error::{Error, Result};
use crate::netcore::{self, Mode, ModelParams};
use crate::rng::{self, StreamRng};
use crate::signal::{Signal, SignalMean};
use crate::signalgen::Split;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradConfig {
    /// Step size of the input descent.
    pub lambda: f64,
    /// Descent stops once `l2 ≤ epsilon`.
    pub epsilon: f64,
    pub max_iters: usize,
    pub smoothgrad_n: usize,
    pub smoothgrad_sigma: f64,
    pub intgrad_steps: usize,
}

impl Default for GradConfig {
    fn default() -> Self {
        GradConfig {
            lambda: 0.1,
            epsilon: 0.015,
            max_iters: 5000,
            smoothgrad_n: 50,
            smoothgrad_sigma: 0.1,
            intgrad_steps: 50,
        }
    }
}

impl GradConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda > 0.0
            && self.lambda.is_finite()
            && self.epsilon > 0.0
            && self.max_iters >= 1
            && self.smoothgrad_n >= 1
            && self.smoothgrad_sigma >= 0.0
            && self.smoothgrad_sigma.is_finite()
            && self.intgrad_steps >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid attribution settings {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Grad,
    GradXInput,
    SmoothGrad,
    IntGrad,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Grad, Method::GradXInput, Method::SmoothGrad, Method::IntGrad];

    pub fn name(self) -> &'static str {
        match self {
            Method::Grad => "grad",
            Method::GradXInput => "gradxinput",
            Method::SmoothGrad => "smoothgrad",
            Method::IntGrad => "intgrad",
        }
    }

    /// Multiplying by the input destroys the sign (and magnitude) relation
    /// to the ideal gradient, so reconstruction metrics do not apply.
    pub fn keeps_sign(self) -> bool {
        matches!(self, Method::Grad | Method::SmoothGrad)
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

/// A base method, optionally averaged over an ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MethodSpec {
    pub base: Method,
    pub ensemble: bool,
}

impl MethodSpec {
    pub const fn single(base: Method) -> Self {
        MethodSpec { base, ensemble: false }
    }

    pub const fn ensemble(base: Method) -> Self {
        MethodSpec { base, ensemble: true }
    }

    /// `grad`, `agra`, `smoothgrad`, `smoothgrad+agra`, ...
    pub fn tag(&self) -> String {
        match (self.base, self.ensemble) {
            (Method::Grad, true) => "agra".into(),
            (m, true) => format!("{}+agra", m.name()),
            (m, false) => m.name().into(),
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

impl FromStr for MethodSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "agra" {
            return Ok(MethodSpec::ensemble(Method::Grad));
        }
        match s.strip_suffix("+agra") {
            Some(base) => Ok(MethodSpec::ensemble(base.parse()?)),
            None => Ok(MethodSpec::single(s.parse()?)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    Single(usize),
    Ensemble(usize),
}

/// Outcome of one input descent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub final_l2: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub values: Signal,
    pub method: MethodSpec,
    pub models: ModelSource,
    /// One entry per descent run (per noise sample, per model); empty for
    /// integrated gradients.
    pub convergence: Vec<Convergence>,
}

impl Attribution {
    pub fn converged(&self) -> bool {
        self.convergence.iter().all(|c| c.converged)
    }

    pub fn iterations(&self) -> usize {
        self.convergence.iter().map(|c| c.iterations).sum()
    }
}

fn model_index(model: &ModelParams) -> usize {
    model.provenance.model_index.unwrap_or(0)
}

/// Plain gradient descent on the input: `x' ← x' - λ ∂l2/∂x'` from
/// `x' = x` while `l2(x') > ε`. Returns `x - x'`.
pub fn descend(model: &ModelParams, x: &Signal, config: &GradConfig) -> Result<(Signal, Convergence)> {
    let mut current = x.clone();
    let mut iterations = 0;
    loop {
        let (s, trace) = netcore::forward(model, &current, Mode::Inference)?;
        let l2 = netcore::loss_l2(s);
        if !l2.is_finite() {
            return Err(Error::NonFinite(format!("l2 after {iterations} descent steps")));
        }
        let converged = l2 <= config.epsilon;
        if converged || iterations == config.max_iters {
            let conv = Convergence {
                iterations,
                final_l2: l2,
                converged,
            };
            return Ok((x.sub(&current)?, conv));
        }
        let g = netcore::backward(model, &trace, 2.0 * s, true, false)?.input.expect("requested");
        for (v, gv) in current.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *v -= config.lambda * gv;
        }
        iterations += 1;
    }
}

pub fn grad(model: &ModelParams, x: &Signal, config: &GradConfig) -> Result<Attribution> {
    let (values, conv) = descend(model, x, config)?;
    Ok(Attribution {
        values,
        method: MethodSpec::single(Method::Grad),
        models: ModelSource::Single(model_index(model)),
        convergence: vec![conv],
    })
}

/// `GRAD(x) ⊙ x`.
pub fn grad_x_input(model: &ModelParams, x: &Signal, config: &GradConfig) -> Result<Attribution> {
    let g = grad(model, x, config)?;
    Ok(Attribution {
        values: g.values.mul(x)?,
        method: MethodSpec::single(Method::GradXInput),
        ..g
    })
}

/// Mean of `GRAD(x + η_i)` over `smoothgrad_n` draws of i.i.d. Gaussian
/// noise. With `σ = 0` every sample equals `GRAD(x)`, which is returned
/// directly.
pub fn smoothgrad(model: &ModelParams, x: &Signal, config: &GradConfig, rng: &mut StreamRng) -> Result<Attribution> {
    let spec = MethodSpec::single(Method::SmoothGrad);
    if config.smoothgrad_sigma == 0.0 {
        let g = grad(model, x, config)?;
        return Ok(Attribution { method: spec, ..g });
    }
    let noise = Normal::new(0.0, config.smoothgrad_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut mean = SignalMean::new(x.len());
    let mut convergence = Vec::with_capacity(config.smoothgrad_n);
    for i in 0..config.smoothgrad_n {
        let mut noisy = x.clone();
        for v in noisy.as_mut_slice() {
            *v += noise.sample(rng);
        }
        let (g, conv) = descend(model, &noisy, config).map_err(|e| e.for_sample(i))?;
        mean.push(&g)?;
        convergence.push(conv);
    }
    Ok(Attribution {
        values: mean.finish(),
        method: spec,
        models: ModelSource::Single(model_index(model)),
        convergence,
    })
}

/// Zero-baseline integrated gradients with a right-endpoint Riemann sum:
/// `x ⊙ (1/N) Σ_{k=1..N} ∂l2/∂x (k/N · x)`.
pub fn integrated_gradients(model: &ModelParams, x: &Signal, config: &GradConfig) -> Result<Attribution> {
    let n = config.intgrad_steps;
    let mut mean = SignalMean::new(x.len());
    for k in 1..=n {
        let point = x.scale(k as f64 / n as f64);
        let g = netcore::backward_to_input(model, &point)?;
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("path gradient at step {k}/{n}")));
        }
        mean.push(&g)?;
    }
    Ok(Attribution {
        values: mean.finish().mul(x)?,
        method: MethodSpec::single(Method::IntGrad),
        models: ModelSource::Single(model_index(model)),
        convergence: Vec::new(),
    })
}

/// Noise stream of model `index` for an attribution seeded with `seed`.
pub fn noise_stream(seed: u64, index: usize) -> StreamRng {
    rng::stream(seed, rng::tag::NOISE, index as u64)
}

/// Runs a single-model method. `index` identifies the model within its
/// ensemble and selects its SmoothGrad noise stream.
pub fn attribute(model: &ModelParams, index: usize, x: &Signal, method: Method, config: &GradConfig, seed: u64) -> Result<Attribution> {
    let mut a = match method {
        Method::Grad => grad(model, x, config),
        Method::GradXInput => grad_x_input(model, x, config),
        Method::SmoothGrad => smoothgrad(model, x, config, &mut noise_stream(seed, index)),
        Method::IntGrad => integrated_gradients(model, x, config),
    }?;
    a.models = ModelSource::Single(index);
    Ok(a)
}

fn check_ensemble(models: &[ModelParams]) -> Result<()> {
    let first = models.first().ok_or_else(|| Error::InvalidConfig("ensemble is empty".into()))?;
    if let Some(i) = models.iter().position(|m| m.arch != first.arch) {
        return Err(Error::InvalidConfig("architectures differ".into()).for_model(i));
    }
    Ok(())
}

/// Arithmetic mean of per-model attributions, in model order.
pub fn average(per_model: &[Attribution], method: MethodSpec) -> Result<Attribution> {
    let first = per_model.first().ok_or_else(|| Error::InvalidConfig("nothing to average".into()))?;
    let mut mean = SignalMean::new(first.values.len());
    let mut convergence = Vec::new();
    for a in per_model {
        mean.push(&a.values)?;
        convergence.extend_from_slice(&a.convergence);
    }
    Ok(Attribution {
        values: mean.finish(),
        method,
        models: ModelSource::Ensemble(per_model.len()),
        convergence,
    })
}

/// `(1/N) Σ_i GRAD_i(x)` over the ensemble.
pub fn agra(models: &[ModelParams], x: &Signal, config: &GradConfig) -> Result<Attribution> {
    agra_combined(models, x, Method::Grad, config, 0)
}

/// The base method applied per model, then averaged. SmoothGrad noise for
/// model `i` comes from [`noise_stream`]`(seed, i)`.
pub fn agra_combined(models: &[ModelParams], x: &Signal, method: Method, config: &GradConfig, seed: u64) -> Result<Attribution> {
    check_ensemble(models)?;
    let per_model = models
        .iter()
        .enumerate()
        .map(|(i, m)| attribute(m, i, x, method, config, seed).map_err(|e| e.for_model(i)))
        .collect::<Result<Vec<_>>>()?;
    average(&per_model, MethodSpec::ensemble(method))
}

pub const BATCH_KIND: &str = "attributions";
pub const BATCH_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub id: usize,
    pub values: Signal,
    pub iterations: usize,
    pub converged: bool,
}

impl BatchEntry {
    pub fn from_attribution(id: usize, a: Attribution) -> Self {
        BatchEntry {
            id,
            iterations: a.iterations(),
            converged: a.converged(),
            values: a.values,
        }
    }
}

/// Attributions of one split, tied to the corpus and ensemble they were
/// computed from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionBatch {
    pub method: String,
    pub config: GradConfig,
    pub seed: u64,
    pub split: Split,
    pub n_models: usize,
    pub corpus_checksum: String,
    pub models_checksum: String,
    pub examples: Vec<BatchEntry>,
}

impl AttributionBatch {
    pub fn spec(&self) -> Result<MethodSpec> {
        self.method.parse()
    }

    pub fn n_unconverged(&self) -> usize {
        self.examples.iter().filter(|e| !e.converged).count()
    }
}

pub fn save_batch(batch: &AttributionBatch, path: &Path) -> Result<String> {
    envelope::write(path, BATCH_KIND, BATCH_VERSION, batch)
}

pub fn load_batch(path: &Path) -> Result<(AttributionBatch, String)> {
    let (batch, checksum): (AttributionBatch, String) = envelope::read(path, BATCH_KIND, BATCH_VERSION)?;
    batch.spec()?;
    Ok((batch, checksum))
}
