//! Ground-truth benchmark for gradient-based explanations of a regression
//! network.
//!
//! The crate synthesizes 2-D signals with known, localized perturbations,
//! trains a small bias-free temporal CNN to regress their quality score,
//! explains its predictions with several gradient methods (plain input
//! descent, Grad×Input, SmoothGrad, Integrated Gradients and their
//! multi-model averages), and scores each explanation against the exact
//! perturbation that was injected.
//!
//! ```
//! use agra::signalgen::{build_corpus, CorpusConfig};
//!
//! let corpus = build_corpus(&CorpusConfig { n_examples: 8, ..CorpusConfig::default() })?;
//! assert_eq!(corpus.train().len(), 6);
//! # Ok::<(), agra::Error>(())
//! ```

pub mod attribution;
pub mod envelope;
mod error;
pub mod metrics;
pub mod netcore;
pub mod rng;
pub mod signal;
pub mod signalgen;
pub mod trainer;

pub use error::{Error, Result};
pub use signal::{Signal, SignalMean, DIMS};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/attribution.md")]
    mod attribution {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
}
