//! Synthetic corpus of scored, perturbed 2-D signals.
//!
//! Each example starts from an ideal signal (one sinusoid per dimension plus
//! a little white noise). A random number of localized, Gaussian-windowed
//! high-frequency bursts is then added at uniformly drawn positions and
//! dimensions. The quality score is a clamped linear function of the MSE
//! between the perturbed and the ideal signal, so the exact difference
//! `perturbed - ideal` is a ground truth for what an explanation should find.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelope;
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::signal::{Signal, DIMS};

pub const CORPUS_KIND: &str = "corpus";
pub const CORPUS_FORMAT_VERSION: u32 = 1;

/// Upper end of the score scale.
pub const MAX_SCORE: f64 = 10.0;

/// Shape of one injected perturbation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationShape {
    /// `A · exp(-(t-c)²/(2w²)) · sin(2π f (t-c))`.
    WindowedCarrier,
    /// `A · exp(-(t-c)²/(2w²))`; the carrier frequency is drawn but unused.
    Bump,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    fn sample(&self, rng: &mut StreamRng) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..self.hi)
        } else {
            self.lo
        }
    }

    fn check(&self, name: &str, positive: bool) -> Result<()> {
        let ok = self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi && (!positive || self.lo > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("{name} range [{}, {}] is invalid", self.lo, self.hi)))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_examples: usize,
    pub train_fraction: f64,
    /// Signal length T.
    pub length: usize,
    /// Sinusoid period per dimension, in samples.
    pub periods: [f64; 2],
    pub base_noise_sigma: f64,
    /// Perturbation count is uniform on `0..=max_perturbations`.
    pub max_perturbations: usize,
    /// Magnitude range; the sign is drawn separately.
    pub amplitude: Range,
    /// Gaussian envelope standard deviation, in samples.
    pub width: Range,
    /// Carrier frequency, in cycles per sample.
    pub carrier_freq: Range,
    pub shape: PerturbationShape,
    /// Envelope is cut to zero beyond this many widths from the center.
    pub support_widths: f64,
    /// MSE that maps to the maximum score.
    pub score_ref_mse: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_examples: 1000,
            train_fraction: 0.75,
            length: 700,
            periods: [100.0, 160.0],
            base_noise_sigma: 0.02,
            max_perturbations: 8,
            amplitude: Range::new(1.5, 4.5),
            width: Range::new(3.0, 8.0),
            carrier_freq: Range::new(0.15, 0.35),
            shape: PerturbationShape::WindowedCarrier,
            support_widths: 4.0,
            score_ref_mse: DEFAULT_SCORE_REF_MSE,
            seed: 0,
        }
    }
}

/// Largest perturbation MSE of the default 1000-example corpus (seed 0),
/// rounded; see `tests::default_reference_mse_is_corpus_maximum`.
pub const DEFAULT_SCORE_REF_MSE: f64 = 0.45;

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_examples == 0 {
            return fail("n_examples must be positive");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail("train_fraction must lie strictly between 0 and 1");
        }
        if self.length == 0 {
            return fail("length must be positive");
        }
        if !self.periods.iter().all(|p| p.is_finite() && *p > 0.0) || self.periods[0] == self.periods[1] {
            return fail("periods must be positive, finite and distinct");
        }
        if !(self.base_noise_sigma.is_finite() && self.base_noise_sigma >= 0.0) {
            return fail("base_noise_sigma must be non-negative");
        }
        if !(self.score_ref_mse.is_finite() && self.score_ref_mse > 0.0) {
            return fail("score_ref_mse must be positive");
        }
        if !(self.support_widths.is_finite() && self.support_widths > 0.0) {
            return fail("support_widths must be positive");
        }
        self.amplitude.check("amplitude", true)?;
        self.width.check("width", true)?;
        self.carrier_freq.check("carrier_freq", true)?;
        Ok(())
    }

    /// Number of training examples: `round(n_examples · train_fraction)`.
    pub fn n_train(&self) -> usize {
        ((self.n_examples as f64) * self.train_fraction).round() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub dim: usize,
    pub center: usize,
    pub width: f64,
    pub amplitude: f64,
    pub carrier_freq: f64,
}

impl Perturbation {
    /// Additive term at time `t`.
    pub fn term(&self, t: usize, shape: PerturbationShape, support_widths: f64) -> f64 {
        let dt = t as f64 - self.center as f64;
        if dt.abs() > support_widths * self.width {
            return 0.0;
        }
        let envelope = self.amplitude * (-(dt * dt) / (2.0 * self.width * self.width)).exp();
        match shape {
            PerturbationShape::WindowedCarrier => envelope * (2.0 * PI * self.carrier_freq * dt).sin(),
            PerturbationShape::Bump => envelope,
        }
    }

    /// Time range `[lo, hi)` where the term can be nonzero.
    pub fn support(&self, len: usize, support_widths: f64) -> (usize, usize) {
        let reach = (support_widths * self.width).floor() as usize;
        (self.center.saturating_sub(reach), (self.center + reach + 1).min(len))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: usize,
    pub split: Split,
    pub score: f64,
    pub perturbations: Vec<Perturbation>,
    pub ideal: Signal,
    pub perturbed: Signal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub examples: Vec<Example>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Example> + '_ {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn train(&self) -> Vec<&Example> {
        self.split(Split::Train).collect()
    }

    pub fn test(&self) -> Vec<&Example> {
        self.split(Split::Test).collect()
    }

    /// Checksum of the serialized corpus payload, identical to the one
    /// stored in the file header by [`save_corpus`].
    pub fn checksum(&self) -> Result<String> {
        Ok(envelope::encode(CORPUS_KIND, CORPUS_FORMAT_VERSION, self)?.1)
    }
}

fn noiseless_value(dim: usize, t: usize, periods: &[f64; 2]) -> f64 {
    (2.0 * PI * t as f64 / periods[dim]).sin()
}

pub fn generate_ideal(config: &CorpusConfig, rng: &mut StreamRng) -> Signal {
    let mut s = Signal::zeros(config.length);
    let noise = Normal::new(0.0, config.base_noise_sigma).expect("sigma validated non-negative");
    for d in 0..DIMS {
        for (t, v) in s.row_mut(d).iter_mut().enumerate() {
            *v = noiseless_value(d, t, &config.periods);
            if config.base_noise_sigma > 0.0 {
                *v += noise.sample(rng);
            }
        }
    }
    s
}

/// Adds `perturbation` to `signal` in place.
pub fn apply_perturbation(signal: &mut Signal, p: &Perturbation, config: &CorpusConfig) {
    let (lo, hi) = p.support(signal.len(), config.support_widths);
    let row = signal.row_mut(p.dim);
    for (t, v) in row.iter_mut().enumerate().take(hi).skip(lo) {
        *v += p.term(t, config.shape, config.support_widths);
    }
}

pub fn draw_perturbation(config: &CorpusConfig, rng: &mut StreamRng) -> Perturbation {
    let dim = rng.random_range(0..DIMS);
    let center = rng.random_range(0..config.length);
    let magnitude = config.amplitude.sample(rng);
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let width = config.width.sample(rng);
    let carrier_freq = config.carrier_freq.sample(rng);
    Perturbation {
        dim,
        center,
        width,
        amplitude: sign * magnitude,
        carrier_freq,
    }
}

/// Draws `k ~ U{0..=max_perturbations}` perturbations and applies them to a
/// copy of `ideal`.
pub fn perturb(ideal: &Signal, config: &CorpusConfig, rng: &mut StreamRng) -> (Signal, Vec<Perturbation>) {
    let k = rng.random_range(0..=config.max_perturbations);
    let mut out = ideal.clone();
    let list: Vec<Perturbation> = (0..k).map(|_| draw_perturbation(config, rng)).collect();
    for p in &list {
        apply_perturbation(&mut out, p, config);
    }
    (out, list)
}

/// `min(10, 10 · mse / score_ref_mse)`.
pub fn score(ideal: &Signal, perturbed: &Signal, config: &CorpusConfig) -> Result<f64> {
    score_from_mse(perturbed.mse(ideal)?, config.score_ref_mse)
}

pub fn score_from_mse(mse: f64, score_ref_mse: f64) -> Result<f64> {
    if !mse.is_finite() {
        return Err(Error::NonFinite("perturbation mse".into()));
    }
    Ok((MAX_SCORE * mse / score_ref_mse).min(MAX_SCORE))
}

fn generate_example(config: &CorpusConfig, id: usize, split: Split) -> Result<Example> {
    let mut rng = rng::stream(config.seed, rng::tag::EXAMPLE, id as u64);
    let ideal = generate_ideal(config, &mut rng);
    let (perturbed, perturbations) = perturb(&ideal, config, &mut rng);
    let score = score(&ideal, &perturbed, config)?;
    Ok(Example {
        id,
        split,
        score,
        perturbations,
        ideal,
        perturbed,
    })
}

fn assign_splits(config: &CorpusConfig) -> Vec<Split> {
    let mut ids: Vec<usize> = (0..config.n_examples).collect();
    ids.shuffle(&mut rng::stream(config.seed, rng::tag::SPLIT, 0));
    let mut splits = vec![Split::Test; config.n_examples];
    for &id in ids.iter().take(config.n_train()) {
        splits[id] = Split::Train;
    }
    splits
}

/// Generates the whole corpus. The result depends only on `config`; each
/// example draws from its own stream, so generation runs in parallel on the
/// current rayon pool without affecting the output.
pub fn build_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let splits = assign_splits(config);
    let examples = splits
        .par_iter()
        .enumerate()
        .map(|(id, &split)| generate_example(config, id, split))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        config: config.clone(),
        examples,
    })
}

/// Writes the corpus and returns its checksum.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<String> {
    envelope::write(path, CORPUS_KIND, CORPUS_FORMAT_VERSION, corpus)
}

/// Loads a corpus and verifies its checksum. Returns the corpus and checksum.
pub fn load_corpus(path: &Path) -> Result<(Corpus, String)> {
    let (corpus, checksum): (Corpus, String) = envelope::read(path, CORPUS_KIND, CORPUS_FORMAT_VERSION)?;
    corpus.config.validate()?;
    for e in &corpus.examples {
        if e.ideal.len() != corpus.config.length || e.perturbed.len() != corpus.config.length {
            return Err(Error::shape("corpus example", corpus.config.length, e.perturbed.len()).for_sample(e.id));
        }
    }
    Ok((corpus, checksum))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> CorpusConfig {
        CorpusConfig {
            base_noise_sigma: 0.0,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn noiseless_ideal_hits_sinusoid_values() {
        let cfg = quiet();
        let s = generate_ideal(&cfg, &mut rng::stream(1, 0, 0));
        assert_eq!(s[(0, 0)], 0.0);
        assert!((s[(0, 25)] - 1.0).abs() < 1e-15);
        assert!((s[(1, 40)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ideal_noise_variance_matches_sigma() {
        let cfg = CorpusConfig::default();
        let s = generate_ideal(&cfg, &mut rng::stream(11, 0, 0));
        let resid: Vec<f64> = (0..cfg.length).map(|t| s[(0, t)] - noiseless_value(0, t, &cfg.periods)).collect();
        let mean = resid.iter().sum::<f64>() / resid.len() as f64;
        let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (resid.len() - 1) as f64;
        assert!((var - 4e-4).abs() < 0.5 * 4e-4, "variance {var}");
    }

    #[test]
    fn zero_perturbations_is_identity() {
        let cfg = CorpusConfig {
            max_perturbations: 0,
            ..CorpusConfig::default()
        };
        let mut r = rng::stream(3, 0, 0);
        let ideal = generate_ideal(&cfg, &mut r);
        let (p, list) = perturb(&ideal, &cfg, &mut r);
        assert!(list.is_empty());
        assert_eq!(p, ideal);
        assert_eq!(score(&ideal, &p, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn carrier_vanishes_at_center() {
        let p = Perturbation {
            dim: 0,
            center: 300,
            width: 5.0,
            amplitude: 1.3,
            carrier_freq: 0.2,
        };
        assert_eq!(p.term(300, PerturbationShape::WindowedCarrier, 4.0), 0.0);
        assert_eq!(p.term(300, PerturbationShape::Bump, 4.0), 1.3);
    }

    #[test]
    fn single_perturbation_is_bounded_and_local() {
        let cfg = quiet();
        let ideal = Signal::zeros(cfg.length);
        let p = Perturbation {
            dim: 1,
            center: 350,
            width: 6.0,
            amplitude: -1.2,
            carrier_freq: 0.27,
        };
        let mut s = ideal.clone();
        apply_perturbation(&mut s, &p, &cfg);
        let diff = s.sub(&ideal).unwrap();
        assert!(diff.row(0).iter().all(|&v| v == 0.0));
        let max = diff.row(1).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= 1.2);
        let total: f64 = diff.row(1).iter().map(|v| v * v).sum();
        let outside: f64 = diff
            .row(1)
            .iter()
            .enumerate()
            .filter(|(t, _)| (*t as f64 - 350.0).abs() > 4.0 * 6.0)
            .map(|(_, v)| v * v)
            .sum();
        assert!(outside < 4e-4 * total);
    }

    #[test]
    fn envelope_energy_tail_matches_quadrature() {
        // Untruncated Gaussian-squared envelope: tail fraction past 4 widths
        // from a fine midpoint quadrature, independent of the generator.
        let w: f64 = 5.0;
        let f = |x: f64| (-(x * x) / (w * w)).exp();
        let h = 1e-3;
        let (mut inner, mut outer) = (0.0, 0.0);
        let mut x = -20.0 * w + h / 2.0;
        while x < 20.0 * w {
            if x.abs() > 4.0 * w {
                outer += f(x) * h;
            } else {
                inner += f(x) * h;
            }
            x += h;
        }
        assert!(outer / (inner + outer) < 4e-4);
    }

    #[test]
    fn score_is_linear_then_clamped() {
        let cfg = quiet();
        let ideal = Signal::zeros(1);
        let at = |m: f64| {
            // one-sample signals: mse = (a² + 0) / 2
            let a = (2.0 * m).sqrt();
            score(&ideal, &Signal::from_rows(&[a], &[0.0]).unwrap(), &cfg).unwrap()
        };
        assert_eq!(at(0.0), 0.0);
        assert!((at(cfg.score_ref_mse) - 10.0).abs() < 1e-12);
        assert!((at(cfg.score_ref_mse / 2.0) - 5.0).abs() < 1e-12);
        assert_eq!(at(cfg.score_ref_mse * 3.0), 10.0);
    }

    #[test]
    fn score_shape_mismatch_is_error() {
        let cfg = quiet();
        assert!(score(&Signal::zeros(3), &Signal::zeros(4), &cfg).is_err());
    }

    #[test]
    fn split_sizes_follow_rounding() {
        let one = CorpusConfig {
            n_examples: 1,
            ..CorpusConfig::default()
        };
        let c = build_corpus(&one).unwrap();
        assert_eq!(c.train().len(), 1);
        assert_eq!(c.test().len(), 0);
        assert_eq!(CorpusConfig::default().n_train(), 750);
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            CorpusConfig { n_examples: 0, ..CorpusConfig::default() },
            CorpusConfig { train_fraction: 1.5, ..CorpusConfig::default() },
            CorpusConfig { train_fraction: 0.0, ..CorpusConfig::default() },
            CorpusConfig { score_ref_mse: 0.0, ..CorpusConfig::default() },
            CorpusConfig { periods: [50.0, 50.0], ..CorpusConfig::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn corpus_is_deterministic() {
        let cfg = CorpusConfig {
            n_examples: 12,
            seed: 99,
            ..CorpusConfig::default()
        };
        let a = build_corpus(&cfg).unwrap();
        let b = build_corpus(&cfg).unwrap();
        assert_eq!(a.checksum().unwrap(), b.checksum().unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn stored_scores_are_recomputable() {
        let cfg = CorpusConfig {
            n_examples: 30,
            seed: 5,
            ..CorpusConfig::default()
        };
        for e in build_corpus(&cfg).unwrap().examples {
            assert_eq!(score(&e.ideal, &e.perturbed, &cfg).unwrap(), e.score);
            assert!((0.0..=MAX_SCORE).contains(&e.score));
            assert_eq!(e.perturbations.is_empty(), e.score == 0.0);
        }
    }

    #[test]
    fn default_reference_mse_is_corpus_maximum() {
        let c = build_corpus(&CorpusConfig::default()).unwrap();
        let max = c
            .examples
            .iter()
            .map(|e| e.perturbed.mse(&e.ideal).unwrap())
            .fold(0.0, f64::max);
        assert!((max - DEFAULT_SCORE_REF_MSE).abs() < 0.1 * DEFAULT_SCORE_REF_MSE, "corpus max mse {max}");
    }
}
