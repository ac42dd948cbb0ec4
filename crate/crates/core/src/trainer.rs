//! Minibatch Adam training of the regressor and of model ensembles.
//!
//! Every random choice of a model (initial weights, epoch shuffles, dropout
//! masks) comes from streams derived from `(base_seed, model_index)`, so a
//! model's weights never depend on which other models are trained or on the
//! order they run in.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelope;
use crate::error::{Error, Result};
use crate::netcore::{self, Adam, AdamState, ArchDescriptor, Mode, ModelParams, Tensor};
use crate::rng;
use crate::signalgen::{Corpus, Example, Split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub n_models: usize,
    pub base_seed: u64,
    /// Reshuffle the training split every epoch.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 0.01,
            batch_size: 32,
            n_models: 50,
            base_seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.n_models == 0 {
            return Err(Error::InvalidConfig("n_models must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training-mode l1 loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Inference-mode MSE on the train split after the last epoch.
    pub final_train_mse: f64,
    /// Inference-mode MSE on the test split, when it is non-empty.
    pub final_test_mse: Option<f64>,
    pub wall_time_secs: f64,
}

/// Seed of model `index` in an ensemble.
pub fn model_seed(base_seed: u64, index: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(base_seed, rng::tag::MODEL), index as u64)
}

fn accumulate(sum: &mut [Tensor], g: &[Tensor]) {
    for (s, t) in sum.iter_mut().zip(g) {
        for (a, b) in s.data.iter_mut().zip(&t.data) {
            *a += b;
        }
    }
}

/// Trains model `model_index` on the train split with loss `(ŝ - s)²`.
pub fn train_model(corpus: &Corpus, config: &TrainConfig, model_index: usize) -> Result<(ModelParams, TrainHistory)> {
    train_model_with(corpus, config, model_index, |_, _| {})
}

/// [`train_model`] with a callback receiving `(epoch, mean loss)`.
pub fn train_model_with(
    corpus: &Corpus,
    config: &TrainConfig,
    model_index: usize,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    let train: Vec<&Example> = corpus.train();
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    let started = Instant::now();
    let arch = ArchDescriptor::standard(corpus.config.length)?;
    let seed = model_seed(config.base_seed, model_index);
    let mut model = netcore::init_params(&arch, seed)?;
    let mut shuffle_rng = rng::stream(seed, rng::tag::SHUFFLE, 0);
    let mut dropout_rng = rng::stream(seed, rng::tag::DROPOUT, 0);
    let adam = Adam::new(config.learning_rate);
    let mut state = AdamState::new(&model.layers);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Tensor> = model.layers.iter().map(|t| Tensor::zeros(&t.shape)).collect();
            for &i in batch {
                let ex = train[i];
                let (s_hat, trace) = netcore::forward(&model, &ex.perturbed, Mode::Training(&mut dropout_rng))?;
                let loss = netcore::loss_l1(s_hat, ex.score);
                if !loss.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        reason: format!("loss {loss} on example {}", ex.id),
                    });
                }
                loss_sum += loss;
                let g = netcore::backward(&model, &trace, 2.0 * (s_hat - ex.score) * scale, false, true)?;
                accumulate(&mut grads, &g.params.expect("requested"));
            }
            adam.step(&mut model.layers, &grads, &mut state).map_err(|e| Error::Divergence {
                epoch,
                reason: e.to_string(),
            })?;
        }
        let mean = loss_sum / train.len() as f64;
        on_epoch(epoch, mean);
        epoch_losses.push(mean);
    }

    let final_train_mse = evaluate_regression(&model, corpus, Split::Train)?;
    let final_test_mse = match evaluate_regression(&model, corpus, Split::Test) {
        Ok(v) => Some(v),
        Err(Error::EmptySplit(_)) => None,
        Err(e) => return Err(e),
    };
    model.provenance = netcore::Provenance {
        model_index: Some(model_index),
        epochs_trained: config.epochs,
        final_train_loss: epoch_losses.last().copied(),
        final_test_mse,
    };
    let history = TrainHistory {
        epoch_losses,
        final_train_mse,
        final_test_mse,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((model, history))
}

/// Trains models `0..n_models` on the current rayon pool. Output order is
/// model index order regardless of scheduling.
pub fn train_ensemble(corpus: &Corpus, config: &TrainConfig) -> Result<Vec<(ModelParams, TrainHistory)>> {
    config.validate()?;
    (0..config.n_models)
        .into_par_iter()
        .map(|i| train_model(corpus, config, i).map_err(|e| e.for_model(i)))
        .collect()
}

/// Mean of `(ŝ(x) - s(x))²` over a split, inference mode.
pub fn evaluate_regression(model: &ModelParams, corpus: &Corpus, split: Split) -> Result<f64> {
    let examples: Vec<&Example> = corpus.split(split).collect();
    regression_mse(model, &examples, split)
}

pub fn regression_mse(model: &ModelParams, examples: &[&Example], split: Split) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptySplit(split.name()));
    }
    let mut sum = 0.0;
    for ex in examples {
        sum += netcore::loss_l1(netcore::predict(model, &ex.perturbed)?, ex.score);
    }
    Ok(sum / examples.len() as f64)
}

pub const ENSEMBLE_KIND: &str = "ensemble";
pub const ENSEMBLE_VERSION: u32 = 1;
pub const ENSEMBLE_FILE: &str = "ensemble.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub file: String,
    pub checksum: String,
    pub final_train_mse: f64,
    pub final_test_mse: Option<f64>,
}

/// Index of a checkpoint directory: one file per model plus this manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub config: TrainConfig,
    pub corpus_checksum: String,
    pub models: Vec<ManifestEntry>,
}

pub fn checkpoint_name(index: usize) -> String {
    format!("model_{index:03}.json")
}

/// Writes every checkpoint and the manifest into `dir`; returns the
/// manifest checksum.
pub fn save_ensemble(
    dir: &Path,
    config: &TrainConfig,
    corpus_checksum: &str,
    trained: &[(ModelParams, TrainHistory)],
) -> Result<String> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut models = Vec::with_capacity(trained.len());
    for (i, (model, history)) in trained.iter().enumerate() {
        let file = checkpoint_name(model.provenance.model_index.unwrap_or(i));
        let checksum = netcore::save_checkpoint(model, &dir.join(&file))?;
        models.push(ManifestEntry {
            index: model.provenance.model_index.unwrap_or(i),
            file,
            checksum,
            final_train_mse: history.final_train_mse,
            final_test_mse: history.final_test_mse,
        });
    }
    let manifest = EnsembleManifest {
        config: config.clone(),
        corpus_checksum: corpus_checksum.to_string(),
        models,
    };
    envelope::write(&dir.join(ENSEMBLE_FILE), ENSEMBLE_KIND, ENSEMBLE_VERSION, &manifest)
}

/// A loaded checkpoint directory.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub manifest: EnsembleManifest,
    pub manifest_checksum: String,
    pub models: Vec<ModelParams>,
}

/// Loads `dir`, checking every checkpoint against its manifest checksum.
/// `limit` keeps only the first models.
pub fn load_ensemble(dir: &Path, limit: Option<usize>) -> Result<Ensemble> {
    let (manifest, manifest_checksum): (EnsembleManifest, String) =
        envelope::read(&dir.join(ENSEMBLE_FILE), ENSEMBLE_KIND, ENSEMBLE_VERSION)?;
    let n = limit.map_or(manifest.models.len(), |l| l.min(manifest.models.len()));
    if n == 0 {
        return Err(Error::InvalidConfig(format!("no models in {}", dir.display())));
    }
    let models = manifest.models[..n]
        .iter()
        .map(|entry| {
            let path: PathBuf = dir.join(&entry.file);
            let (model, checksum) = netcore::load_checkpoint(&path)?;
            if checksum != entry.checksum {
                return Err(Error::Checksum {
                    expected: entry.checksum.clone(),
                    actual: checksum,
                });
            }
            Ok(model)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        manifest,
        manifest_checksum,
        models,
    })
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
