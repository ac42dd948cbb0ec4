#![allow(dead_code)]

use std::sync::OnceLock;

use agra::netcore::ModelParams;
use agra::signalgen::{build_corpus, Corpus, CorpusConfig};
use agra::trainer::{train_ensemble, TrainConfig};

pub const T: usize = 300;

/// Short-signal corpus; the reference MSE is rescaled so scores spread
/// over [0, 10] as they do at the default length.
pub fn small_corpus(n: usize, seed: u64) -> Corpus {
    build_corpus(&CorpusConfig {
        n_examples: n,
        length: T,
        score_ref_mse: 1.05,
        seed,
        ..CorpusConfig::default()
    })
    .unwrap()
}

/// Five models trained once per test binary.
pub fn trained(n_models: usize) -> (&'static Corpus, &'static [ModelParams]) {
    static CELL: OnceLock<(Corpus, Vec<ModelParams>)> = OnceLock::new();
    let (corpus, models) = CELL.get_or_init(|| {
        let corpus = small_corpus(400, 4);
        let cfg = TrainConfig {
            epochs: 30,
            n_models: 5,
            base_seed: 8,
            ..TrainConfig::default()
        };
        let models = train_ensemble(&corpus, &cfg).unwrap().into_iter().map(|(m, _)| m).collect();
        (corpus, models)
    });
    (corpus, &models[..n_models])
}
