//! Optional TOML run configuration.
//!
//! ```toml
//! [corpus]          # any corpus generator field
//! n_examples = 200
//! [train]           # any training field
//! epochs = 30
//! [attribution]     # descent and method parameters
//! epsilon = 0.015
//! [explain]
//! seed = 3
//! ```
//!
//! Sections overlay the library defaults key by key; command-line flags
//! override both.

use std::path::Path;

use anyhow::{bail, Context};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use agra::attribution::GradConfig;
use agra::signalgen::CorpusConfig;
use agra::trainer::TrainConfig;

use crate::UsageError;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    corpus: Option<toml::Table>,
    train: Option<toml::Table>,
    attribution: Option<toml::Table>,
    explain: Option<SeedSection>,
    eval: Option<SeedSection>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeedSection {
    seed: Option<u64>,
}

/// Configuration after overlaying the file on the defaults.
#[derive(Clone, Debug, Serialize)]
pub struct Resolved {
    pub corpus: CorpusConfig,
    pub train: TrainConfig,
    pub attribution: GradConfig,
    pub explain_seed: Option<u64>,
    pub eval_seed: Option<u64>,
}

fn overlay<T: Serialize + DeserializeOwned>(base: T, table: Option<&toml::Table>, section: &str) -> anyhow::Result<T> {
    let Some(table) = table else { return Ok(base) };
    let mut value = serde_json::to_value(base)?;
    let obj = value.as_object_mut().expect("config structs serialize to objects");
    for (key, v) in table {
        if !obj.contains_key(key) {
            bail!(UsageError(format!("unknown key `{key}` in [{section}]")));
        }
        obj.insert(key.clone(), serde_json::to_value(v)?);
    }
    serde_json::from_value(value).map_err(|e| UsageError(format!("invalid [{section}] section: {e}")).into())
}

pub fn load(path: Option<&Path>) -> anyhow::Result<Resolved> {
    let file: FileConfig = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", p.display())))?
        }
        None => FileConfig::default(),
    };
    Ok(Resolved {
        corpus: overlay(CorpusConfig::default(), file.corpus.as_ref(), "corpus")?,
        train: overlay(TrainConfig::default(), file.train.as_ref(), "train")?,
        attribution: overlay(GradConfig::default(), file.attribution.as_ref(), "attribution")?,
        explain_seed: file.explain.and_then(|s| s.seed),
        eval_seed: file.eval.and_then(|s| s.seed),
    })
}
